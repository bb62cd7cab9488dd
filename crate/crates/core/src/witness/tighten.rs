//! Tightening an existing witness with a constraint value read off data the
//! experiment already recorded.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{attainable_range, constrained_bound, sew_bound, ConstraintSpec, TestOperator};
use crate::error::{Error, Result};
use crate::optim::{Direction, Layout, OptimizerSettings};
use crate::povm::{product_operator, Povm};
use crate::qcore::HermitianOperator;
use crate::sampler::{estimate_weighted, CountsTable};

/// `β · (E_{o₁} ⊗ E_{o₂} ⊗ …)`, outcome labels 1-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionTerm {
    pub beta: f64,
    pub outcomes: Vec<usize>,
}

/// Raw counts, or joint-outcome probabilities keyed by outcome tuple.
#[derive(Clone, Debug, PartialEq)]
pub enum MeasuredData {
    Counts(CountsTable),
    Expectations(BTreeMap<Vec<usize>, f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TightenResult {
    pub constraint: Vec<usize>,
    /// Measured constraint value (clipped into the attainable range).
    pub c: f64,
    pub c_clipped: bool,
    pub g_of_c: f64,
    /// The standard bound, or `g(c)` if the optimizer found that larger.
    pub old_bound: f64,
    pub sew_value: f64,
    pub improvement: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_measured: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_l: Option<f64>,
    pub converged: bool,
}

fn test_operator(povms: &[&Povm], terms: &[DecompositionTerm]) -> Result<TestOperator> {
    if terms.is_empty() {
        return Err(Error::InvalidParameter("empty decomposition".into()));
    }
    if terms.iter().any(|t| !t.beta.is_finite()) {
        return Err(Error::NonFinite("decomposition coefficient"));
    }
    if let [t] = terms {
        if t.beta >= 0.0 {
            let mut factors = t
                .outcomes
                .iter()
                .zip(povms)
                .map(|(&o, p)| Ok(p.effect(o)?.operator().clone()))
                .collect::<Result<Vec<HermitianOperator>>>()?;
            if factors.len() != povms.len() {
                return Err(Error::DimensionMismatch("outcome tuple arity".into()));
            }
            factors[0] = factors[0].scale(t.beta);
            return TestOperator::product(factors);
        }
    }
    let mut sum = product_operator(povms, &terms[0].outcomes)?.scale(terms[0].beta);
    for t in &terms[1..] {
        sum = sum.combine(1.0, &product_operator(povms, &t.outcomes)?, t.beta)?;
    }
    Ok(TestOperator::new(sum))
}

fn measured(data: &MeasuredData, povms: &[&Povm], cell: &[usize]) -> Result<f64> {
    match data {
        MeasuredData::Counts(t) => {
            let per_party: Vec<usize> = povms.iter().map(|p| p.num_outcomes()).collect();
            if t.outcomes_per_party() != per_party.as_slice() {
                return Err(Error::DimensionMismatch(format!(
                    "counts have outcomes {:?}, devices {per_party:?}",
                    t.outcomes_per_party()
                )));
            }
            t.frequency(cell)
        }
        MeasuredData::Expectations(m) => m
            .get(cell)
            .copied()
            .ok_or_else(|| Error::Domain(format!("no measured value for outcomes {cell:?}"))),
    }
}

/// Re-optimize `L̂ = Σ βᵢ ⊗ E` over product states with `⟨Ĉ⟩ = c`, `Ĉ` the
/// product of the effects in `constraint` and `c` taken from `data`.
pub fn tighten(
    povms: &[&Povm],
    terms: &[DecompositionTerm],
    data: &MeasuredData,
    constraint: &[usize],
    settings: &OptimizerSettings,
) -> Result<TightenResult> {
    let test = test_operator(povms, terms)?;
    let cop = product_operator(povms, constraint)?;
    let c_raw = measured(data, povms, constraint)?;
    if !c_raw.is_finite() {
        return Err(Error::NonFinite("measured constraint value"));
    }
    let (l_measured, sigma_l) = match data {
        MeasuredData::Counts(t) => {
            let w = estimate_weighted(
                t,
                &terms
                    .iter()
                    .map(|t| (t.beta, t.outcomes.clone()))
                    .collect::<Vec<_>>(),
            )?;
            (Some(w.value), Some(w.sigma))
        }
        MeasuredData::Expectations(_) => {
            let vals: Result<Vec<f64>> = terms
                .iter()
                .map(|t| measured(data, povms, &t.outcomes).map(|v| t.beta * v))
                .collect();
            (vals.ok().map(|v| v.iter().sum()), None)
        }
    };
    let layout = Layout::parties(test.dims());
    let range = attainable_range(&cop, &layout, settings)?;
    let c = c_raw.clamp(range.min, range.max);
    let sew = sew_bound(&test, &layout, Direction::Sup, settings)?;
    let g = constrained_bound(
        &test,
        &ConstraintSpec { op: cop, value: c },
        &layout,
        settings,
    )?;
    let old_bound = sew.value.max(g.value);
    Ok(TightenResult {
        constraint: constraint.to_vec(),
        c,
        c_clipped: c != c_raw,
        g_of_c: g.value,
        old_bound,
        sew_value: sew.value,
        improvement: old_bound - g.value,
        l_measured,
        sigma_l,
        converged: sew.converged && g.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::povm::{build_three_outcome, ThreeOutcomeParams};

    #[test]
    fn improvement_at_reference_constraint_values() {
        let povm = build_three_outcome(ThreeOutcomeParams::new(2.0 / 3.0, 0.0).unwrap()).unwrap();
        let terms = [DecompositionTerm {
            beta: 1.0,
            outcomes: vec![2, 2],
        }];
        let settings = OptimizerSettings {
            restarts: 16,
            ..Default::default()
        };
        for (c, expect) in [(0.0, 1.0 / 9.0), (1.0 / 36.0, 0.0)] {
            let data = MeasuredData::Expectations(BTreeMap::from([(vec![1, 1], c)]));
            let r = tighten(&[&povm, &povm], &terms, &data, &[1, 1], &settings).unwrap();
            assert!((r.improvement - expect).abs() < 1e-6, "{r:?}");
            assert!(r.converged);
        }
        let data = MeasuredData::Expectations(BTreeMap::new());
        assert!(tighten(&[&povm, &povm], &terms, &data, &[1, 1], &settings).is_err());
    }
}
