//! Measurement models and the product test/constraint operators built from them.
//!
//! Outcome labels are 1-based throughout (outcome `1` is the first effect),
//! matching the counts-file keys.

use std::f64::consts::TAU;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qcore::{self, commutator_norm, HermitianOperator, Operator, C64, PSD_TOL};

const COMPLETENESS_TOL: f64 = 1e-10;
const COMMUTES_TOL: f64 = 1e-10;

/// A POVM element: `0 ≤ E ≤ I`.
#[derive(Clone, Debug, PartialEq)]
pub struct Effect(HermitianOperator);

impl Effect {
    pub fn new(op: HermitianOperator) -> Result<Self> {
        let ev = op.eigenvalues();
        let (lo, hi) = (ev[0], ev[ev.len() - 1]);
        if lo < -PSD_TOL {
            return Err(Error::InvalidParameter(format!(
                "effect has negative eigenvalue {lo:e}"
            )));
        }
        if 1.0 - hi < -PSD_TOL {
            return Err(Error::InvalidParameter(format!(
                "effect exceeds identity (eigenvalue {hi})"
            )));
        }
        Ok(Self(op))
    }

    pub fn operator(&self) -> &HermitianOperator {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Povm {
    effects: Vec<Effect>,
    params: Option<ThreeOutcomeParams>,
}

impl Povm {
    pub fn new(effects: Vec<Effect>) -> Result<Self> {
        let first = effects
            .first()
            .ok_or_else(|| Error::InvalidParameter("POVM without effects".into()))?;
        let dims = first.0.dims().to_vec();
        let mut sum = Operator::new(dims.clone(), first.0.matrix().map(|_| C64::new(0.0, 0.0)))?;
        for e in &effects {
            if e.0.dims() != dims.as_slice() {
                return Err(Error::DimensionMismatch(
                    "POVM effects differ in dims".into(),
                ));
            }
            sum = sum.add(e.0.operator())?;
        }
        let defect = sum.max_abs_diff(&Operator::identity(&dims)?)?;
        if defect > COMPLETENESS_TOL {
            return Err(Error::InvalidParameter(format!(
                "effects sum to identity only within {defect:e}"
            )));
        }
        Ok(Self {
            effects,
            params: None,
        })
    }

    pub fn effects(&self) -> &[Effect] {
        &self.effects
    }

    pub fn num_outcomes(&self) -> usize {
        self.effects.len()
    }

    pub fn dims(&self) -> &[usize] {
        self.effects[0].0.dims()
    }

    /// The effect for 1-based outcome label `outcome`.
    pub fn effect(&self, outcome: usize) -> Result<&Effect> {
        if outcome == 0 || outcome > self.effects.len() {
            return Err(Error::InvalidIndex(format!(
                "outcome {outcome} for a {}-outcome POVM",
                self.effects.len()
            )));
        }
        Ok(&self.effects[outcome - 1])
    }

    /// Parameters of the three-outcome family, when built from it.
    pub fn params(&self) -> Option<&ThreeOutcomeParams> {
        self.params.as_ref()
    }
}

/// Parameters `(x, θ)` of the three-outcome qubit device.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThreeOutcomeParams {
    pub x: f64,
    pub theta: f64,
}

impl ThreeOutcomeParams {
    /// `x` must lie strictly inside (0, 1); `θ` is reduced to [0, 2π).
    pub fn new(x: f64, theta: f64) -> Result<Self> {
        let p = Self { x, theta };
        p.validate()?;
        Ok(Self {
            x,
            theta: theta.rem_euclid(TAU),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x > 0.0 && self.x < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "x = {} must lie strictly inside (0, 1)",
                self.x
            )));
        }
        if !self.theta.is_finite() {
            return Err(Error::InvalidParameter("theta must be finite".into()));
        }
        Ok(())
    }

    /// Unnormalized `|χ±⟩ = |H⟩/√2 ± e^{iθ} √((1−x)/2) |V⟩`; squared norm `1 − x/2`.
    pub fn chi(&self, sign: f64) -> DVector<C64> {
        let v = ((1.0 - self.x) / 2.0).sqrt();
        DVector::from_vec(vec![
            C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0),
            C64::from_polar(sign * v, self.theta),
        ])
    }

    pub fn chi_plus(&self) -> DVector<C64> {
        self.chi(1.0)
    }

    pub fn chi_minus(&self) -> DVector<C64> {
        self.chi(-1.0)
    }
}

/// `Π₁ = x|V⟩⟨V|`, `Π₂ = |χ⁺⟩⟨χ⁺|`, `Π₃ = |χ⁻⟩⟨χ⁻|` on a qubit with basis (|H⟩, |V⟩).
pub fn build_three_outcome(params: ThreeOutcomeParams) -> Result<Povm> {
    params.validate()?;
    let pi1 = HermitianOperator::diagonal(&[2], &[0.0, params.x])?;
    let pi2 = HermitianOperator::projector(&[2], &params.chi_plus())?;
    let pi3 = HermitianOperator::projector(&[2], &params.chi_minus())?;
    let mut povm = Povm::new(vec![
        Effect::new(pi1)?,
        Effect::new(pi2)?,
        Effect::new(pi3)?,
    ])?;
    povm.params = Some(params);
    Ok(povm)
}

/// Tensor product of one selected effect per party (1-based outcome labels).
pub fn product_operator(povms: &[&Povm], outcomes: &[usize]) -> Result<HermitianOperator> {
    if povms.len() != outcomes.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} POVMs but {} outcome labels",
            povms.len(),
            outcomes.len()
        )));
    }
    let factors = povms
        .iter()
        .zip(outcomes)
        .map(|(p, &o)| p.effect(o).map(|e| e.operator().operator()))
        .collect::<Result<Vec<_>>>()?;
    HermitianOperator::new(qcore::tensor(&factors)?)
}

/// The same outcome label on every party, e.g. `Π₂ ⊗ Π₂ ⊗ …`.
pub fn uniform_product_operator(povms: &[&Povm], outcome: usize) -> Result<HermitianOperator> {
    product_operator(povms, &vec![outcome; povms.len()])
}

/// All ordered pairs `(i, j)`, `i ≠ j`, of outcome labels for an `n`-outcome device.
pub fn ordered_outcome_pairs(n: usize) -> Vec<(usize, usize)> {
    (1..=n)
        .flat_map(|i| (1..=n).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub commutes: bool,
    pub commutator_norm: f64,
}

/// Necessary condition for a constraint/test pair to improve on the plain
/// witness: the two operators must not commute.
pub fn uew_admissibility_check(
    c: &HermitianOperator,
    l: &HermitianOperator,
) -> Result<AdmissibilityReport> {
    let norm = commutator_norm(c, l)?;
    Ok(AdmissibilityReport {
        commutes: norm <= COMMUTES_TOL,
        commutator_norm: norm,
    })
}

/// One party entry of a POVM file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PartySpec {
    ThreeOutcome(ThreeOutcomeParams),
    Explicit { effects: Vec<Operator> },
}

/// `{ "parties": [ { "x": 0.6667, "theta": 0.0 }, { "effects": [...] } ] }`
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PovmFile {
    pub parties: Vec<PartySpec>,
}

impl PovmFile {
    pub fn uniform(params: ThreeOutcomeParams, parties: usize) -> Self {
        Self {
            parties: vec![PartySpec::ThreeOutcome(params); parties],
        }
    }

    pub fn build(&self) -> Result<Vec<Povm>> {
        if self.parties.is_empty() {
            return Err(Error::Format("POVM file lists no parties".into()));
        }
        self.parties
            .iter()
            .map(|p| match p {
                PartySpec::ThreeOutcome(params) => build_three_outcome(*params),
                PartySpec::Explicit { effects } => Povm::new(
                    effects
                        .iter()
                        .map(|op| HermitianOperator::new(op.clone()).and_then(Effect::new))
                        .collect::<Result<Vec<_>>>()?,
                ),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn close(a: C64, re: f64, im: f64) -> bool {
        (a.re - re).abs() < 1e-14 && (a.im - im).abs() < 1e-14
    }

    #[test]
    fn three_outcome_entries_at_two_thirds() {
        let povm = build_three_outcome(ThreeOutcomeParams::new(2.0 / 3.0, 0.0).unwrap()).unwrap();
        let p1 = povm.effect(1).unwrap().operator().matrix();
        let p2 = povm.effect(2).unwrap().operator().matrix();
        let p3 = povm.effect(3).unwrap().operator().matrix();
        let off = 1.0 / 12f64.sqrt();
        assert!(close(p1[(0, 0)], 0.0, 0.0) && close(p1[(1, 1)], 2.0 / 3.0, 0.0));
        assert!(close(p1[(0, 1)], 0.0, 0.0));
        assert!(close(p2[(0, 0)], 0.5, 0.0) && close(p2[(1, 1)], 1.0 / 6.0, 0.0));
        assert!(close(p2[(0, 1)], off, 0.0) && close(p2[(1, 0)], off, 0.0));
        assert!(close(p3[(0, 0)], 0.5, 0.0) && close(p3[(1, 1)], 1.0 / 6.0, 0.0));
        assert!(close(p3[(0, 1)], -off, 0.0));
    }

    #[test]
    fn family_invariants() {
        for &x in &[0.1, 0.3, 0.5, 2.0 / 3.0, 0.9] {
            for &theta in &[0.0, PI / 3.0, PI] {
                let params = ThreeOutcomeParams::new(x, theta).unwrap();
                let povm = build_three_outcome(params).unwrap();
                assert_eq!(povm.num_outcomes(), 3);
                for o in 2..=3 {
                    let tr = povm.effect(o).unwrap().operator().operator().trace();
                    assert!((tr.re - (1.0 - x / 2.0)).abs() < 1e-14);
                }
                assert!((params.chi_plus().norm_squared() - (1.0 - x / 2.0)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn theta_pi_swaps_plus_and_minus() {
        let a = build_three_outcome(ThreeOutcomeParams::new(0.4, PI).unwrap()).unwrap();
        let b = build_three_outcome(ThreeOutcomeParams::new(0.4, 0.0).unwrap()).unwrap();
        let d = a
            .effect(2)
            .unwrap()
            .operator()
            .operator()
            .max_abs_diff(b.effect(3).unwrap().operator().operator())
            .unwrap();
        assert!(d < 1e-15);
    }

    #[test]
    fn degenerate_x_rejected() {
        for x in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
            assert!(ThreeOutcomeParams::new(x, 0.0).is_err());
        }
        let raw = ThreeOutcomeParams { x: 1.0, theta: 0.0 };
        assert!(build_three_outcome(raw).is_err());
    }

    #[test]
    fn incomplete_povm_rejected() {
        let e = Effect::new(HermitianOperator::diagonal(&[2], &[0.5, 0.5]).unwrap()).unwrap();
        assert!(Povm::new(vec![e]).is_err());
        assert!(Effect::new(HermitianOperator::diagonal(&[2], &[1.2, 0.0]).unwrap()).is_err());
    }

    #[test]
    fn product_operators() {
        let params = ThreeOutcomeParams::new(2.0 / 3.0, 0.0).unwrap();
        let povm = build_three_outcome(params).unwrap();
        let c = product_operator(&[&povm, &povm], &[1, 1]).unwrap();
        let m = c.matrix();
        for i in 0..4 {
            for j in 0..4 {
                let expected = if i == 3 && j == 3 { 4.0 / 9.0 } else { 0.0 };
                assert!((m[(i, j)].re - expected).abs() < 1e-15 && m[(i, j)].im == 0.0);
            }
        }
        let l = product_operator(&[&povm, &povm], &[2, 2]).unwrap();
        assert!((l.max_eigenvalue() - 4.0 / 9.0).abs() < 1e-12);

        let three = uniform_product_operator(&[&povm, &povm, &povm], 1).unwrap();
        assert!((three.max_eigenvalue() - 8.0 / 27.0).abs() < 1e-12);

        assert!(matches!(
            product_operator(&[&povm, &povm], &[1, 4]),
            Err(Error::InvalidIndex(_))
        ));
        assert!(matches!(
            product_operator(&[&povm, &povm], &[1]),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(product_operator(&[&povm], &[0]).is_err());
    }

    #[test]
    fn admissibility() {
        let povm = build_three_outcome(ThreeOutcomeParams::new(2.0 / 3.0, 0.0).unwrap()).unwrap();
        let c = product_operator(&[&povm, &povm], &[1, 1]).unwrap();
        let l = product_operator(&[&povm, &povm], &[2, 2]).unwrap();
        assert!(uew_admissibility_check(&c, &c).unwrap().commutes);
        let r = uew_admissibility_check(&c, &l).unwrap();
        assert!(!r.commutes && r.commutator_norm > 1e-3);
        let d1 = HermitianOperator::diagonal(&[2, 2], &[0.1, 0.2, 0.3, 0.4]).unwrap();
        let d2 = HermitianOperator::diagonal(&[2, 2], &[1.0, 0.0, 0.5, 0.25]).unwrap();
        assert!(uew_admissibility_check(&d1, &d2).unwrap().commutes);
    }

    #[test]
    fn dichotomic_projective_device_always_commutes() {
        // A two-outcome projective measurement along an arbitrary axis.
        let v = DVector::from_vec(vec![C64::new(0.6, 0.0), C64::from_polar(0.8, 0.7)]);
        let p = HermitianOperator::projector(&[2], &v).unwrap();
        let q = HermitianOperator::identity(&[2])
            .unwrap()
            .combine(1.0, &p, -1.0)
            .unwrap();
        let povm = Povm::new(vec![Effect::new(p).unwrap(), Effect::new(q).unwrap()]).unwrap();
        for (ci, li) in [((1, 1), (2, 2)), ((1, 2), (2, 1)), ((1, 1), (1, 2))] {
            let c = product_operator(&[&povm, &povm], &[ci.0, ci.1]).unwrap();
            let l = product_operator(&[&povm, &povm], &[li.0, li.1]).unwrap();
            assert!(uew_admissibility_check(&c, &l).unwrap().commutes);
        }
    }

    #[test]
    fn six_ordered_pairs_for_three_outcomes() {
        let pairs = ordered_outcome_pairs(3);
        assert_eq!(pairs, vec![(1, 2), (1, 3), (2, 1), (2, 3), (3, 1), (3, 2)]);
    }

    #[test]
    fn povm_file_formats() {
        let text =
            r#"{ "parties": [ { "x": 0.6667, "theta": 0.0 }, { "x": 0.5, "theta": 1.0 } ] }"#;
        let file: PovmFile = serde_json::from_str(text).unwrap();
        let povms = file.build().unwrap();
        assert_eq!(povms.len(), 2);
        assert_eq!(povms[1].params().unwrap().x, 0.5);

        let explicit = r#"{ "parties": [ { "effects": [
            {"dims":[2],"entries":[[1,0],[0,0],[0,0],[0,0]]},
            {"dims":[2],"entries":[[0,0],[0,0],[0,0],[1,0]]} ] } ] }"#;
        let file: PovmFile = serde_json::from_str(explicit).unwrap();
        let povms = file.build().unwrap();
        assert_eq!(povms[0].num_outcomes(), 2);
        assert!(povms[0].params().is_none());
    }
}
