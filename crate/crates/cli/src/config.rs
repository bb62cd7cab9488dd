use std::path::PathBuf;

use clap::Args;
use uew_core::optim::OptimizerSettings;
use uew_core::povm::ThreeOutcomeParams;

use crate::error::{CliError, CliResult};

/// Flags shared by every subcommand.
#[derive(Args, Clone, Debug)]
pub struct RunConfig {
    /// Device parameter x of the three-outcome measurement, in (0, 1).
    #[arg(long, default_value_t = 2.0 / 3.0, global = true)]
    pub x: f64,
    /// Device phase θ (radians).
    #[arg(long, default_value_t = 0.0, global = true)]
    pub theta: f64,
    /// Number of constraint values on the separability curve.
    #[arg(long, default_value_t = 201, global = true)]
    pub grid: usize,
    /// Seed for every random draw and optimizer restart.
    #[arg(long, default_value_t = 0, global = true)]
    pub seed: u64,
    /// Error-bar multiplier k for certification (0 = point estimate).
    #[arg(long, default_value_t = 3.0, global = true)]
    pub sigma: f64,
    /// Output file (or directory for commands that write several files).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Override the number of random optimizer restarts.
    #[arg(long, global = true)]
    pub restarts: Option<usize>,
}

impl RunConfig {
    /// Range checks run before any computation.
    pub fn validate(&self) -> CliResult<()> {
        ThreeOutcomeParams::new(self.x, self.theta)?;
        if self.grid < 2 {
            return Err(CliError::Input(format!(
                "--grid must be at least 2, got {}",
                self.grid
            )));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(CliError::Input(format!(
                "--sigma must be non-negative, got {}",
                self.sigma
            )));
        }
        if self.restarts == Some(0) {
            return Err(CliError::Input("--restarts must be positive".into()));
        }
        Ok(())
    }

    pub fn params(&self) -> CliResult<ThreeOutcomeParams> {
        Ok(ThreeOutcomeParams::new(self.x, self.theta)?)
    }

    pub fn settings(&self) -> OptimizerSettings {
        let mut s = OptimizerSettings {
            seed: self.seed,
            ..Default::default()
        };
        if let Some(r) = self.restarts {
            s.restarts = r;
            s.warm_restarts = s.warm_restarts.min(r);
        }
        s
    }
}

/// Integer count that also accepts scientific notation such as `1e6`.
pub fn parse_count(s: &str) -> Result<u64, String> {
    if let Ok(n) = s.parse::<u64>() {
        return Ok(n);
    }
    let v: f64 = s.parse().map_err(|_| format!("not a number: {s:?}"))?;
    if !(v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v <= 9.0e15) {
        return Err(format!("not a non-negative integer: {s:?}"));
    }
    Ok(v as u64)
}

/// `"1,1"` → `[1, 1]`.
pub fn parse_outcomes(s: &str) -> Result<Vec<usize>, String> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| format!("bad outcome label {t:?} in {s:?}"))
        })
        .collect()
}

/// Outcome tuple as a single clap value (a bare `Vec` would be read as repeated flags).
#[derive(Clone, Debug, PartialEq)]
pub struct Outcomes(pub Vec<usize>);

pub fn parse_outcome_tuple(s: &str) -> Result<Outcomes, String> {
    parse_outcomes(s).map(Outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_accept_scientific_notation() {
        assert_eq!(parse_count("1e6"), Ok(1_000_000));
        assert_eq!(parse_count("250"), Ok(250));
        assert!(parse_count("1.5").is_err());
        assert!(parse_count("-3").is_err());
    }

    #[test]
    fn outcome_lists() {
        assert_eq!(parse_outcomes("2, 2"), Ok(vec![2, 2]));
        assert!(parse_outcomes("1,a").is_err());
    }
}
