//! The two-qubit three-outcome family: its test/constraint pair, the
//! entangled-state maximum along the constraint, and a semi-analytic
//! product-state reference used to cross-check the optimizer.

use nalgebra::DVector;

use super::{constrained_bound, BoundResult, ConstraintSpec, TestOperator};
use crate::error::{Error, Result};
use crate::optim::{Layout, OptimizerSettings};
use crate::povm::{build_three_outcome, product_operator, ThreeOutcomeParams};
use crate::qcore::{HermitianOperator, ProductState, PureState, C64};

/// `x` at which the closed-form entangled maximum is stated.
pub const ENTANGLED_MAX_X: f64 = 2.0 / 3.0;

/// `(L̂, Ĉ) = (Π₂ ⊗ Π₂, Π₁ ⊗ Π₁)` for two copies of the three-outcome device.
pub fn pair_operators(params: ThreeOutcomeParams) -> Result<(TestOperator, HermitianOperator)> {
    let povm = build_three_outcome(params)?;
    let pi2 = povm.effect(2)?.operator().clone();
    let l = TestOperator::product(vec![pi2.clone(), pi2])?;
    let c = product_operator(&[&povm, &povm], &[1, 1])?;
    Ok((l, c))
}

fn check_c(c: f64, x: f64) -> Result<()> {
    if !c.is_finite() {
        return Err(Error::NonFinite("constraint value"));
    }
    if c < -1e-12 || c > x * x + 1e-12 {
        return Err(Error::Domain(format!("c = {c} outside [0, {}]", x * x)));
    }
    Ok(())
}

/// Closed-form entangled maximum at `x = 2/3`:
/// `(α + √c/2)²` with `α = √(3(4 − 9c)/20)`.
///
/// This expression exceeds the largest eigenvalue of `L̂` (4/9) for small
/// `c`, so it cannot be an expectation value; [`entangled_pure_sup`] gives
/// the attained maximum. It is kept because callers report it verbatim.
pub fn entangled_max(c: f64) -> Result<f64> {
    check_c(c, ENTANGLED_MAX_X)?;
    let c = c.clamp(0.0, ENTANGLED_MAX_X * ENTANGLED_MAX_X);
    // Expanded so that c = 0 gives 3/5 without a sqrt round trip.
    let alpha_sq = (3.0 * (4.0 - 9.0 * c) / 20.0).max(0.0);
    Ok(alpha_sq + alpha_sq.sqrt() * c.sqrt() + c / 4.0)
}

/// Exact `sup ⟨L̂⟩` over all two-qubit states with `⟨Ĉ⟩ = c`:
/// `((√(1 − c/x²)·√(3 − 2x) + (1 − x)√c/x) / 2)²`.
pub fn entangled_pure_sup(x: f64, c: f64) -> Result<f64> {
    ThreeOutcomeParams::new(x, 0.0)?;
    check_c(c, x)?;
    let c = c.clamp(0.0, x * x);
    let r = (1.0 - c / (x * x)).max(0.0).sqrt();
    let delta = c.sqrt() / x;
    Ok(((r * (3.0 - 2.0 * x).sqrt() + (1.0 - x) * delta) / 2.0).powi(2))
}

/// `α|HH⟩ + β e^{iθ}(|HV⟩ + |VH⟩) + δ e^{2iθ}|VV⟩` with `δ = √c/x` and
/// `(α, β)` maximizing the overlap with `|χ⁺χ⁺⟩`; at `x = 2/3`,
/// `α = √(3(4 − 9c)/20)` and `β = √((4 − 9c)/20)`. The phases make
/// `⟨L̂(θ)⟩` independent of `θ`.
pub fn optimal_entangled_state(params: ThreeOutcomeParams, c: f64) -> Result<PureState> {
    params.validate()?;
    let x = params.x;
    check_c(c, x)?;
    let c = c.clamp(0.0, x * x);
    let r = (1.0 - c / (x * x)).max(0.0).sqrt();
    let norm = (3.0 - 2.0 * x).sqrt();
    let alpha = r / norm;
    let beta = r * (1.0 - x).sqrt() / norm;
    let delta = c.sqrt() / x;
    let th = params.theta;
    let amps = DVector::from_vec(vec![
        C64::new(alpha, 0.0),
        C64::from_polar(beta, th),
        C64::from_polar(beta, th),
        C64::from_polar(delta, 2.0 * th),
    ]);
    PureState::normalized(vec![2, 2], amps)
}

/// `|χ̂⁺⟩ ⊗ |χ̂⁺⟩` (normalized): the optimal point of the standard bound.
pub fn sew_optimal_state(params: ThreeOutcomeParams) -> Result<ProductState> {
    let a = PureState::normalized(vec![2], params.chi_plus())?;
    ProductState::new(vec![a.clone(), a])
}

/// `|H⟩ ⊗ |χ̂⁺⟩`: attains the product-state bound at `c = 0`.
pub fn zero_constraint_optimal_state(params: ThreeOutcomeParams) -> Result<ProductState> {
    let h = PureState::basis(&[2], 0)?;
    let b = PureState::normalized(vec![2], params.chi_plus())?;
    ProductState::new(vec![h, b])
}

/// Numeric `sup ⟨L̂⟩` over all (entangled) two-qubit pure states with
/// `⟨Ĉ⟩ = c`, with no symmetry assumed between the two parties.
pub fn numeric_entangled_sup(
    params: ThreeOutcomeParams,
    c: f64,
    settings: &OptimizerSettings,
) -> Result<BoundResult> {
    let (l, cop) = pair_operators(params)?;
    constrained_bound(
        &l,
        &ConstraintSpec { op: cop, value: c },
        &Layout::global(&[2, 2]),
        settings,
    )
}

/// Best `⟨a|Π₂|a⟩` for a qubit with `⟨a|Π₁|a⟩ = c_a`.
fn per_qubit(x: f64, ca: f64) -> f64 {
    let v = ((1.0 - ca / x) / 2.0).max(0.0).sqrt();
    let w = (ca * (1.0 - x) / (2.0 * x)).max(0.0).sqrt();
    (v + w).powi(2)
}

/// Product-state curve of the three-outcome pair by per-qubit reduction:
/// `max m(c_a)·m(c/c_a)` over `c_a ∈ [c/x, x]`, where `m` is the best
/// single-qubit `⟨Π₂⟩` at fixed `⟨Π₁⟩`.
pub fn three_outcome_reference_bound(x: f64, c: f64) -> Result<f64> {
    ThreeOutcomeParams::new(x, 0.0)?;
    check_c(c, x)?;
    let c = c.clamp(0.0, x * x);
    if c == 0.0 {
        return Ok((1.0 - x / 2.0) * per_qubit(x, 0.0));
    }
    let f = |ca: f64| per_qubit(x, ca) * per_qubit(x, c / ca);
    let (lo, hi) = (c / x, x);
    if hi - lo <= 1e-15 {
        return Ok(f(hi));
    }
    const N: usize = 4000;
    let at = |i: usize| lo + (hi - lo) * i as f64 / N as f64;
    let best = (0..=N)
        .max_by(|&i, &j| f(at(i)).total_cmp(&f(at(j))).then(j.cmp(&i)))
        .expect("non-empty scan");
    let (mut a, mut b) = (at(best.saturating_sub(1)), at((best + 1).min(N)));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let (p, q) = (b - g * (b - a), a + g * (b - a));
        if f(p) < f(q) {
            a = p;
        } else {
            b = q;
        }
    }
    Ok(f(at(best)).max(f(0.5 * (a + b))))
}
