//! `uew`: separability curves, constrained witness bounds and entanglement
//! certification from measurement counts.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{
    BoundArgs, CertifyArgs, MultipartyArgs, OperatorArgs, SampleArgs, SimulateArgs, TightenArgs,
};
use config::{parse_count, parse_outcome_tuple, Outcomes, RunConfig};
use error::CliResult;

#[derive(Parser, Debug)]
#[command(name = "uew", version, about)]
struct Cli {
    #[command(flatten)]
    cfg: RunConfig,
    #[command(subcommand)]
    command: Command,
}

/// Which operators to bound: product cells of the device, or explicit files.
#[derive(clap::Args, Debug)]
struct OperatorFlags {
    /// Outcome tuple whose product effect is the test operator.
    #[arg(long, default_value = "2,2", value_parser = parse_outcome_tuple)]
    test: Outcomes,
    /// Outcome tuple whose product effect is the constraint operator.
    #[arg(long, default_value = "1,1", value_parser = parse_outcome_tuple)]
    constraint: Outcomes,
    /// POVM file (one entry per party) replacing the --x/--theta device.
    #[arg(long)]
    povm: Option<PathBuf>,
    /// Explicit test operator (JSON {dims, entries}); needs --constraint-op.
    #[arg(long)]
    test_op: Option<PathBuf>,
    /// Explicit constraint operator (JSON {dims, entries}).
    #[arg(long)]
    constraint_op: Option<PathBuf>,
}

impl From<OperatorFlags> for OperatorArgs {
    fn from(f: OperatorFlags) -> Self {
        OperatorArgs {
            test: f.test.0,
            constraint: f.constraint.0,
            povm: f.povm,
            test_op: f.test_op,
            constraint_op: f.constraint_op,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Product-state bound g(c) on a grid over the attainable constraint range.
    ///
    /// Writes CSV to stdout, or curve.csv and summary.json into --out DIR.
    Curve {
        #[command(flatten)]
        ops: OperatorFlags,
    },
    /// Decide entanglement from a counts file.
    Certify {
        /// Counts JSON as written by `simulate`.
        #[arg(long)]
        counts: PathBuf,
        /// Precomputed curve CSV; computed from the device otherwise.
        #[arg(long)]
        curve: Option<PathBuf>,
        #[arg(long, default_value = "1,1", value_parser = parse_outcome_tuple)]
        c_cell: Outcomes,
        #[arg(long, default_value = "2,2", value_parser = parse_outcome_tuple)]
        l_cell: Outcomes,
    },
    /// Draw measurement counts for a state.
    Simulate {
        /// optimal-entangled, maximally-mixed, bell, sew-optimal,
        /// zero-constraint-optimal, or a JSON state file.
        #[arg(long)]
        state: String,
        /// Constraint value for optimal-entangled.
        #[arg(long, default_value_t = 0.0)]
        c: f64,
        #[arg(long, value_parser = parse_count)]
        shots: u64,
        #[arg(long)]
        povm: Option<PathBuf>,
    },
    /// (⟨C⟩, ⟨L⟩) for random product states, as CSV.
    Sample {
        #[arg(long, value_parser = parse_count)]
        n: u64,
        /// Count points above the curve (computed unless --curve is given).
        #[arg(long)]
        check: bool,
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// N-agent bounds g(x; N, m) with c = 0.
    ///
    /// Every agent uses one fixed three-outcome device and no basis changes,
    /// so the local measurement effort scales as 3N with the number of agents.
    Multiparty {
        #[arg(long)]
        n: usize,
        /// Tabulate every N from 2 up to --n.
        #[arg(long)]
        upto: bool,
        /// Also optimize numerically over this partition, e.g. "1,2|3".
        #[arg(long)]
        partition: Option<String>,
        /// Constraint value for the numeric partition bound.
        #[arg(long, default_value_t = 0.0)]
        c: f64,
    },
    /// Re-optimize a decomposed test operator at the measured constraint value.
    Tighten {
        #[arg(long)]
        counts: Option<PathBuf>,
        /// JSON map from outcome tuple ("1,1") to expectation value.
        #[arg(long)]
        expectations: Option<PathBuf>,
        /// Terms "beta:outcomes" separated by ';', e.g. "1:2,2;-0.5:1,3".
        #[arg(long, default_value = "1:2,2")]
        terms: String,
        #[arg(long, default_value = "1,1", value_parser = parse_outcome_tuple)]
        constraint: Outcomes,
    },
    /// Single bound: the standard one, or at a fixed constraint value with --c.
    Bound {
        #[command(flatten)]
        ops: OperatorFlags,
        #[arg(long, allow_negative_numbers = true)]
        c: Option<f64>,
        /// Infimum instead of supremum.
        #[arg(long)]
        inf: bool,
        /// Range over all pure states instead of product states.
        #[arg(long)]
        global: bool,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = &cli.cfg;
    cfg.validate()?;
    match cli.command {
        Command::Curve { ops } => commands::curve(cfg, &ops.into()),
        Command::Certify {
            counts,
            curve,
            c_cell,
            l_cell,
        } => commands::certify(
            cfg,
            &CertifyArgs {
                counts,
                curve,
                c_cell: c_cell.0,
                l_cell: l_cell.0,
            },
        ),
        Command::Simulate {
            state,
            c,
            shots,
            povm,
        } => commands::simulate(
            cfg,
            &SimulateArgs {
                state,
                c,
                shots,
                povm,
            },
        ),
        Command::Sample { n, check, curve } => {
            commands::sample(cfg, &SampleArgs { n, check, curve })
        }
        Command::Multiparty {
            n,
            upto,
            partition,
            c,
        } => commands::multiparty(
            cfg,
            &MultipartyArgs {
                n,
                upto,
                partition,
                c,
            },
        ),
        Command::Tighten {
            counts,
            expectations,
            terms,
            constraint,
        } => commands::tighten_cmd(
            cfg,
            &TightenArgs {
                counts,
                expectations,
                terms,
                constraint: constraint.0,
            },
        ),
        Command::Bound {
            ops,
            c,
            inf,
            global,
        } => commands::bound(
            cfg,
            &BoundArgs {
                ops: ops.into(),
                c,
                inf,
                all_states: global,
            },
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
