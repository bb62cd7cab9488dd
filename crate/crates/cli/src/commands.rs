use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use uew_core::multipartite::{
    closed_form_bound, numeric_partition_bound, Partition, MAX_NUMERIC_AGENTS,
};
use uew_core::numfmt::{fmt_sig, to_json_string};
use uew_core::optim::{Direction, Layout, OptimizerSettings};
use uew_core::povm::{
    build_three_outcome, product_operator, uew_admissibility_check, AdmissibilityReport, Povm,
    PovmFile,
};
use uew_core::qcore::{DensityMatrix, HermitianOperator, PureState};
use uew_core::sampler::{estimate, scatter, simulate_counts, CountsTable, EstimateResult};
use uew_core::witness::{
    attainable_range, constrained_extremum, detect, entangled_max, entangled_pure_sup,
    optimal_entangled_state, separability_curve, sew_bound, sew_optimal_state, tighten,
    uniform_grid, zero_constraint_optimal_state, BoundResult, ConstraintSpec, DecompositionTerm,
    MeasuredData, SeparabilityCurve, TestOperator, TightenResult, Verdict, ENTANGLED_MAX_X,
};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// Within this distance of 2/3 the closed-form entangled maximum is reported.
const ENTANGLED_X_TOL: f64 = 1e-3;

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Write to `--out` when given, otherwise to stdout.
fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn json<T: Serialize>(value: &T) -> CliResult<String> {
    Ok(to_json_string(value)?)
}

/// One device per party: from `--povm FILE`, else two copies of the
/// three-outcome device at `--x`, `--theta`.
fn devices(cfg: &RunConfig, povm_file: Option<&Path>) -> CliResult<Vec<Povm>> {
    match povm_file {
        Some(p) => {
            let file: PovmFile = serde_json::from_str(&read(p)?)?;
            Ok(file.build()?)
        }
        None => {
            let d = build_three_outcome(cfg.params()?)?;
            Ok(vec![d.clone(), d])
        }
    }
}

/// `L̂ = ⊗ E_{test}`, `Ĉ = ⊗ E_{constraint}`; the test operator keeps its
/// factors for the analytic cross-check.
fn cell_operators(
    povms: &[Povm],
    test: &[usize],
    constraint: &[usize],
) -> CliResult<(TestOperator, HermitianOperator)> {
    let refs: Vec<&Povm> = povms.iter().collect();
    if test.len() != refs.len() || constraint.len() != refs.len() {
        return Err(CliError::Input(format!(
            "outcome tuples need one label per party ({} parties)",
            refs.len()
        )));
    }
    let factors = refs
        .iter()
        .zip(test)
        .map(|(p, &o)| Ok(p.effect(o)?.operator().clone()))
        .collect::<uew_core::Result<Vec<_>>>()?;
    let l = TestOperator::product(factors)?;
    let c = product_operator(&refs, constraint)?;
    Ok((l, c))
}

fn read_operator(path: &Path) -> CliResult<HermitianOperator> {
    Ok(serde_json::from_str(&read(path)?)?)
}

#[derive(Clone, Debug)]
pub struct OperatorArgs {
    pub test: Vec<usize>,
    pub constraint: Vec<usize>,
    pub povm: Option<PathBuf>,
    pub test_op: Option<PathBuf>,
    pub constraint_op: Option<PathBuf>,
}

fn operators(cfg: &RunConfig, a: &OperatorArgs) -> CliResult<(TestOperator, HermitianOperator)> {
    match (&a.test_op, &a.constraint_op) {
        (Some(t), Some(c)) => Ok((TestOperator::new(read_operator(t)?), read_operator(c)?)),
        (None, None) => cell_operators(&devices(cfg, a.povm.as_deref())?, &a.test, &a.constraint),
        _ => Err(CliError::Input(
            "--test-op and --constraint-op must be given together".into(),
        )),
    }
}

fn compute_curve(
    cfg: &RunConfig,
    test: &TestOperator,
    constraint: &HermitianOperator,
) -> CliResult<SeparabilityCurve> {
    let settings = cfg.settings();
    let layout = Layout::parties(test.dims());
    let range = attainable_range(constraint, &layout, &settings)?;
    let grid = uniform_grid(range.min, range.max, cfg.grid)?;
    Ok(separability_curve(
        test, constraint, &grid, &layout, &settings,
    )?)
}

#[derive(Serialize)]
struct EntangledRow {
    c: f64,
    closed_form: f64,
    attained: f64,
}

#[derive(Serialize)]
struct CurveSummary<'a> {
    x: f64,
    theta: f64,
    grid_points: usize,
    c_range: [f64; 2],
    g_s: Option<f64>,
    c_star: Option<f64>,
    reliable: bool,
    unconverged_c: Vec<f64>,
    concavity_violations_c: Vec<f64>,
    admissibility: AdmissibilityReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    warning: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    entangled_max: Option<Vec<EntangledRow>>,
    operator_fingerprint: &'a str,
    settings: &'a OptimizerSettings,
}

pub fn curve(cfg: &RunConfig, ops: &OperatorArgs) -> CliResult<()> {
    let (test, constraint) = operators(cfg, ops)?;
    let admissibility = uew_admissibility_check(&constraint, test.op())?;
    let curve = compute_curve(cfg, &test, &constraint)?;
    let three_outcome = ops.test_op.is_none() && ops.povm.is_none();
    let entangled = if three_outcome
        && (cfg.x - ENTANGLED_MAX_X).abs() <= ENTANGLED_X_TOL
        && ops.test == [2, 2]
        && ops.constraint == [1, 1]
    {
        let rows = curve
            .points()
            .iter()
            .filter(|p| p.c <= ENTANGLED_MAX_X * ENTANGLED_MAX_X)
            .map(|p| {
                Ok(EntangledRow {
                    c: p.c,
                    closed_form: entangled_max(p.c)?,
                    attained: entangled_pure_sup(cfg.x, p.c.min(cfg.x * cfg.x))?,
                })
            })
            .collect::<uew_core::Result<Vec<_>>>()?;
        Some(rows)
    } else {
        None
    };
    let (lo, hi) = curve.range();
    let summary = CurveSummary {
        x: cfg.x,
        theta: cfg.theta,
        grid_points: curve.points().len(),
        c_range: [lo, hi],
        g_s: curve.sew().map(|s| s.g),
        c_star: curve.sew().map(|s| s.c),
        reliable: curve.is_reliable(),
        unconverged_c: curve.points().iter().filter(|p| !p.converged).map(|p| p.c).collect(),
        concavity_violations_c: curve.concavity_violations().iter().map(|&i| curve.points()[i].c).collect(),
        admissibility,
        warning: admissibility.commutes.then_some(
            "test and constraint operators commute: the constrained bound cannot improve on the standard one",
        ),
        entangled_max: entangled,
        operator_fingerprint: curve.operator_fingerprint(),
        settings: curve.optimizer_settings(),
    };
    let summary_json = json(&summary)?;
    match &cfg.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            write_file(&dir.join("curve.csv"), &curve.to_csv())?;
            write_file(&dir.join("summary.json"), &summary_json)?;
            print!("{summary_json}");
        }
        None => print!("{}", curve.to_csv()),
    }
    if !curve.is_reliable() {
        return Err(CliError::Unreliable(
            "separability curve unreliable: some points did not converge".into(),
        ));
    }
    Ok(())
}

#[derive(Serialize)]
struct CertifyReport<'a> {
    x: f64,
    theta: f64,
    c_cell: &'a [usize],
    l_cell: &'a [usize],
    estimate: EstimateResult,
    verdict: Verdict,
    curve_source: String,
    curve_points: usize,
}

pub struct CertifyArgs {
    pub counts: PathBuf,
    pub curve: Option<PathBuf>,
    pub c_cell: Vec<usize>,
    pub l_cell: Vec<usize>,
}

fn read_counts(path: &Path) -> CliResult<CountsTable> {
    Ok(serde_json::from_str(&read(path)?)?)
}

/// Device parameters echoed in a counts file win over the flags.
fn counts_config(cfg: &RunConfig, counts: &CountsTable) -> RunConfig {
    let mut cfg = cfg.clone();
    if let Some([p, rest @ ..]) = counts.povm_params() {
        if rest.iter().all(|q| q == p) {
            cfg.x = p.x;
            cfg.theta = p.theta;
        }
    }
    cfg
}

pub fn certify(cfg: &RunConfig, a: &CertifyArgs) -> CliResult<()> {
    let counts = read_counts(&a.counts)?;
    let cfg = counts_config(cfg, &counts);
    cfg.validate()?;
    let est = estimate(&counts, &a.c_cell, &a.l_cell)?;
    let (curve, source) = match &a.curve {
        Some(p) => (
            SeparabilityCurve::from_csv(&read(p)?)?,
            p.display().to_string(),
        ),
        None => {
            let povms = vec![build_three_outcome(cfg.params()?)?; counts.parties()];
            let (l, c) = cell_operators(&povms, &a.l_cell, &a.c_cell)?;
            (compute_curve(&cfg, &l, &c)?, "computed".to_string())
        }
    };
    let verdict = detect(
        &curve,
        est.c_hat,
        est.l_hat,
        est.sigma_c,
        est.sigma_l,
        cfg.sigma,
    )?;
    let report = CertifyReport {
        x: cfg.x,
        theta: cfg.theta,
        c_cell: &a.c_cell,
        l_cell: &a.l_cell,
        estimate: est,
        verdict,
        curve_source: source,
        curve_points: curve.points().len(),
    };
    emit(cfg.out.as_deref(), &json(&report)?)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum StateFile {
    Pure(PureState),
    Mixed(DensityMatrix),
}

pub struct SimulateArgs {
    pub state: String,
    pub c: f64,
    pub shots: u64,
    pub povm: Option<PathBuf>,
}

/// Named two-qubit states, or a JSON state file.
fn load_state(cfg: &RunConfig, name: &str, c: f64) -> CliResult<DensityMatrix> {
    let params = cfg.params()?;
    Ok(match name {
        "optimal-entangled" => optimal_entangled_state(params, c)?.to_density(),
        "maximally-mixed" => DensityMatrix::maximally_mixed(&[2, 2])?,
        "bell" => PureState::bell().to_density(),
        "sew-optimal" => sew_optimal_state(params)?.to_density(),
        "zero-constraint-optimal" => zero_constraint_optimal_state(params)?.to_density(),
        path => match serde_json::from_str::<StateFile>(&read(Path::new(path))?) {
            Ok(StateFile::Pure(p)) => p.to_density(),
            Ok(StateFile::Mixed(m)) => m,
            Err(e) => return Err(CliError::Input(format!("{path}: not a state file ({e})"))),
        },
    })
}

pub fn simulate(cfg: &RunConfig, a: &SimulateArgs) -> CliResult<()> {
    let rho = load_state(cfg, &a.state, a.c)?;
    let povms = devices(cfg, a.povm.as_deref())?;
    let refs: Vec<&Povm> = povms.iter().collect();
    let counts = simulate_counts(&rho, &refs, a.shots, cfg.seed)?;
    emit(cfg.out.as_deref(), &json(&counts)?)
}

#[derive(Serialize)]
struct SampleSummary {
    n: usize,
    seed: u64,
    max_l: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    above_curve: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_excess: Option<f64>,
}

pub struct SampleArgs {
    pub n: u64,
    pub check: bool,
    pub curve: Option<PathBuf>,
}

pub fn sample(cfg: &RunConfig, a: &SampleArgs) -> CliResult<()> {
    let (l, c) = cell_operators(&devices(cfg, None)?, &[2, 2], &[1, 1])?;
    let n = usize::try_from(a.n).map_err(|_| CliError::Input("--n too large".into()))?;
    let pts = scatter(l.op(), &c, n, cfg.seed)?;
    let mut csv = String::from("c,l\n");
    for (cv, lv) in &pts {
        writeln!(csv, "{},{}", fmt_sig(*cv), fmt_sig(*lv)).expect("writing to a String");
    }
    let curve = match (&a.curve, a.check) {
        (Some(p), _) => Some(SeparabilityCurve::from_csv(&read(p)?)?),
        (None, true) => Some(compute_curve(cfg, &l, &c)?),
        (None, false) => None,
    };
    let (above, excess) = match &curve {
        Some(cv) => {
            let mut above = 0;
            let mut worst = f64::NEG_INFINITY;
            for &(x, y) in &pts {
                let e = y - cv.upper_value(x)?;
                worst = worst.max(e);
                if e > 1e-9 {
                    above += 1;
                }
            }
            (Some(above), Some(worst))
        }
        None => (None, None),
    };
    let summary = SampleSummary {
        n,
        seed: cfg.seed,
        max_l: pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max),
        above_curve: above,
        max_excess: excess,
    };
    match &cfg.out {
        Some(p) => {
            write_file(p, &csv)?;
            print!("{}", json(&summary)?);
        }
        None => print!("{csv}"),
    }
    if above.is_some_and(|k| k > 0) {
        return Err(CliError::Unreliable(format!(
            "{} sampled product states lie above the curve",
            above.unwrap_or(0)
        )));
    }
    Ok(())
}

pub struct MultipartyArgs {
    pub n: usize,
    pub upto: bool,
    pub partition: Option<String>,
    pub c: f64,
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn multiparty(cfg: &RunConfig, a: &MultipartyArgs) -> CliResult<()> {
    if !(2..=MAX_NUMERIC_AGENTS).contains(&a.n) {
        return Err(CliError::Input(format!(
            "--n must lie in 2..={MAX_NUMERIC_AGENTS}, got {}",
            a.n
        )));
    }
    let partition: Option<Partition> = a.partition.as_deref().map(str::parse).transpose()?;
    if let Some(p) = &partition {
        if p.n_agents() != a.n {
            return Err(CliError::Input(format!(
                "partition {p} covers {} agents, --n is {}",
                p.n_agents(),
                a.n
            )));
        }
    }
    let first = if a.upto { 2 } else { a.n };
    let mut csv = String::from("n,m_k,g,source\n");
    for n in first..=a.n {
        for m in 1..=n {
            let b = closed_form_bound(cfg.x, n, m)?;
            writeln!(csv, "{n},{m},{},closed-form", fmt_sig(b.g)).expect("writing to a String");
        }
    }
    let mut unreliable = false;
    if let Some(p) = &partition {
        let b = numeric_partition_bound(cfg.params()?, p, a.c, &cfg.settings())?;
        unreliable = !b.converged;
        let source = csv_field(&format!("numeric c={} partition={p}", fmt_sig(a.c)));
        writeln!(csv, "{},{},{},{source}", a.n, p.largest(), fmt_sig(b.value))
            .expect("writing to a String");
    }
    emit(cfg.out.as_deref(), &csv)?;
    if unreliable {
        return Err(CliError::Unreliable(
            "numeric partition bound did not converge".into(),
        ));
    }
    Ok(())
}

pub struct TightenArgs {
    pub counts: Option<PathBuf>,
    pub expectations: Option<PathBuf>,
    pub terms: String,
    pub constraint: Vec<usize>,
}

/// `"1:2,2;-0.5:1,3"` → β and outcome tuple per term.
fn parse_terms(s: &str) -> CliResult<Vec<DecompositionTerm>> {
    s.split(';')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            let (b, o) = t
                .split_once(':')
                .ok_or_else(|| CliError::Input(format!("term {t:?} is not beta:outcomes")))?;
            let beta: f64 = b
                .trim()
                .parse()
                .map_err(|_| CliError::Input(format!("bad beta in {t:?}")))?;
            let outcomes = crate::config::parse_outcomes(o).map_err(CliError::Input)?;
            Ok(DecompositionTerm { beta, outcomes })
        })
        .collect()
}

#[derive(Serialize)]
struct TightenReport {
    x: f64,
    theta: f64,
    #[serde(flatten)]
    result: TightenResult,
}

pub fn tighten_cmd(cfg: &RunConfig, a: &TightenArgs) -> CliResult<()> {
    let terms = parse_terms(&a.terms)?;
    let (data, cfg) = match (&a.counts, &a.expectations) {
        (Some(p), None) => {
            let counts = read_counts(p)?;
            let cfg = counts_config(cfg, &counts);
            (MeasuredData::Counts(counts), cfg)
        }
        (None, Some(p)) => {
            let raw: BTreeMap<String, f64> = serde_json::from_str(&read(p)?)?;
            let map = raw
                .into_iter()
                .map(|(k, v)| {
                    Ok((
                        crate::config::parse_outcomes(&k).map_err(CliError::Input)?,
                        v,
                    ))
                })
                .collect::<CliResult<BTreeMap<_, _>>>()?;
            (MeasuredData::Expectations(map), cfg.clone())
        }
        _ => {
            return Err(CliError::Input(
                "give exactly one of --counts or --expectations".into(),
            ))
        }
    };
    cfg.validate()?;
    let parties = match &data {
        MeasuredData::Counts(t) => t.parties(),
        MeasuredData::Expectations(_) => a.constraint.len(),
    };
    let povms = vec![build_three_outcome(cfg.params()?)?; parties];
    let refs: Vec<&Povm> = povms.iter().collect();
    let result = tighten(&refs, &terms, &data, &a.constraint, &cfg.settings())?;
    let converged = result.converged;
    emit(
        cfg.out.as_deref(),
        &json(&TightenReport {
            x: cfg.x,
            theta: cfg.theta,
            result,
        })?,
    )?;
    if !converged {
        return Err(CliError::Unreliable(
            "tightened bound did not converge".into(),
        ));
    }
    Ok(())
}

pub struct BoundArgs {
    pub ops: OperatorArgs,
    pub c: Option<f64>,
    pub inf: bool,
    pub all_states: bool,
}

#[derive(Serialize)]
struct BoundReport<'a> {
    x: f64,
    theta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    c: Option<f64>,
    state_family: &'a str,
    bound: BoundResult,
    settings: OptimizerSettings,
}

pub fn bound(cfg: &RunConfig, a: &BoundArgs) -> CliResult<()> {
    let (test, constraint) = operators(cfg, &a.ops)?;
    let settings = cfg.settings();
    let direction = if a.inf {
        Direction::Inf
    } else {
        Direction::Sup
    };
    let (layout, family) = if a.all_states {
        (Layout::global(test.dims()), "all-pure-states")
    } else {
        (Layout::parties(test.dims()), "product-states")
    };
    let b = match a.c {
        None => sew_bound(&test, &layout, direction, &settings)?,
        Some(c) => constrained_extremum(
            &test,
            &ConstraintSpec {
                op: constraint,
                value: c,
            },
            &layout,
            direction,
            &settings,
        )?,
    };
    let converged = b.converged;
    let report = BoundReport {
        x: cfg.x,
        theta: cfg.theta,
        c: a.c,
        state_family: family,
        bound: b,
        settings,
    };
    emit(cfg.out.as_deref(), &json(&report)?)?;
    if !converged {
        return Err(CliError::Unreliable("bound did not converge".into()));
    }
    Ok(())
}
