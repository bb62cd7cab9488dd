//! Separable bounds of a test operator, with or without an equality
//! constraint on a second operator, and the witnesses and verdicts built on
//! them.
//!
//! All suprema run over pure (block-)product states: the separable set is the
//! convex hull of those, and a linear objective over a convex hull peaks at an
//! extreme point. With a constraint the feasible set is a slice of the hull,
//! whose supremum is the upper concave envelope of the pure-state curve; see
//! [`SeparabilityCurve`].

mod curve;
mod entangled;
mod tighten;

pub use curve::{
    branch_bounds, detect, separability_curve, uniform_grid, Branch, CurvePoint, SeparabilityCurve,
    SewPoint, Verdict, CHORD_TOL,
};
pub use entangled::{
    entangled_max, entangled_pure_sup, numeric_entangled_sup, optimal_entangled_state,
    pair_operators, sew_optimal_state, three_outcome_reference_bound,
    zero_constraint_optimal_state, ENTANGLED_MAX_X,
};
pub use tighten::{tighten, DecompositionTerm, MeasuredData, TightenResult};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::optim::{
    ConstraintMode, Direction, Layout, LocalResult, OptimizerSettings, Problem, ProductManifold,
};
use crate::qcore::{expectation, tensor, HermitianOperator, ProductState, C64};
use crate::rng::derive_seed;

/// Constraint values this close to an end of the attainable range are
/// treated as that end.
pub const RANGE_TOL: f64 = 1e-9;
const CROSS_CHECK_TOL: f64 = 1e-6;

/// The operator whose separable supremum defines a witness. When built from
/// tensor factors, those are kept for analytic cross-checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestOperator {
    op: HermitianOperator,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    factors: Option<Vec<HermitianOperator>>,
}

impl TestOperator {
    pub fn new(op: HermitianOperator) -> Self {
        Self { op, factors: None }
    }

    /// `⊗ᵢ Lᵢ`, one factor per party.
    pub fn product(factors: Vec<HermitianOperator>) -> Result<Self> {
        let ops: Vec<_> = factors.iter().map(|f| f.operator()).collect();
        let op = HermitianOperator::new(tensor(&ops)?)?;
        Ok(Self {
            op,
            factors: Some(factors),
        })
    }

    pub fn op(&self) -> &HermitianOperator {
        &self.op
    }

    pub fn factors(&self) -> Option<&[HermitianOperator]> {
        self.factors.as_deref()
    }

    pub fn dims(&self) -> &[usize] {
        self.op.dims()
    }

    /// `Π λ_max(Lᵢ)` (or `Π λ_min`) when every factor is positive
    /// semidefinite: the exact product-state extremum.
    pub fn analytic_extremum(&self, direction: Direction) -> Option<f64> {
        let factors = self.factors.as_ref()?;
        if factors.iter().any(|f| f.min_eigenvalue() < -1e-12) {
            return None;
        }
        Some(
            factors
                .iter()
                .map(|f| match direction {
                    Direction::Sup => f.max_eigenvalue(),
                    Direction::Inf => f.min_eigenvalue().max(0.0),
                })
                .product(),
        )
    }
}

/// `⟨Ĉ⟩ = value`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub op: HermitianOperator,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub value: f64,
    pub direction: Direction,
    pub maximizer: ProductState,
    /// `|⟨Ĉ⟩ − c|` at the maximizer; 0 without a constraint.
    pub feasibility_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constraint_value: Option<f64>,
    /// Closed-form value the numeric result was checked against, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<f64>,
    pub restarts_used: usize,
    pub converged: bool,
}

/// Smallest and largest `⟨Ĉ⟩` over the state family of a layout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttainableRange {
    pub min: f64,
    pub max: f64,
}

impl AttainableRange {
    pub fn contains(&self, c: f64) -> bool {
        c >= self.min - RANGE_TOL && c <= self.max + RANGE_TOL
    }

    fn mode(&self, c: f64) -> Result<ConstraintMode> {
        if !c.is_finite() {
            return Err(Error::NonFinite("constraint value"));
        }
        if !self.contains(c) {
            return Err(Error::Domain(format!(
                "constraint value {c} outside the attainable range [{}, {}]",
                self.min, self.max
            )));
        }
        Ok(if (c - self.min).abs() <= RANGE_TOL {
            ConstraintMode::AtMinimum
        } else if (c - self.max).abs() <= RANGE_TOL {
            ConstraintMode::AtMaximum
        } else {
            ConstraintMode::Interior
        })
    }
}

/// SHA-256 of the dimensions and matrix entries, hex encoded.
pub fn fingerprint(ops: &[&HermitianOperator]) -> String {
    let mut h = Sha256::new();
    for op in ops {
        h.update((op.dims().len() as u64).to_le_bytes());
        for &d in op.dims() {
            h.update((d as u64).to_le_bytes());
        }
        for z in op.matrix().iter() {
            h.update(z.re.to_le_bytes());
            h.update(z.im.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn check_layout(op: &HermitianOperator, layout: &Layout) -> Result<()> {
    if layout.subsystem_dims() != op.dims() {
        return Err(Error::DimensionMismatch(format!(
            "layout subsystems {:?} vs operator dims {:?}",
            layout.subsystem_dims(),
            op.dims()
        )));
    }
    Ok(())
}

pub(crate) fn seed_for(fp: &str, tag: &str, c: f64, settings: &OptimizerSettings) -> u64 {
    derive_seed(&[
        fp.as_bytes(),
        tag.as_bytes(),
        &c.to_bits().to_le_bytes(),
        &settings.seed.to_le_bytes(),
    ])
}

fn unconstrained(
    manifold: &ProductManifold,
    op: &DMatrix<C64>,
    direction: Direction,
    warm: &[Vec<f64>],
    n_random: usize,
    seed: u64,
    settings: &OptimizerSettings,
) -> (LocalResult, usize) {
    Problem {
        manifold,
        test: op,
        direction,
        constraint: None,
    }
    .multistart(warm, n_random, seed, settings)
}

const SPECTRUM_SNAP: f64 = 1e-12;

pub fn attainable_range(
    constraint: &HermitianOperator,
    layout: &Layout,
    settings: &OptimizerSettings,
) -> Result<AttainableRange> {
    check_layout(constraint, layout)?;
    settings.validate()?;
    let m = ProductManifold::new(layout);
    let fp = fingerprint(&[constraint]);
    let run = |d: Direction, tag: &str| {
        unconstrained(
            &m,
            constraint.matrix(),
            d,
            &[],
            settings.restarts,
            seed_for(&fp, tag, 0.0, settings),
            settings,
        )
        .0
        .value
    };
    // Product values lie inside the spectrum; snap round-off onto its edges.
    let snap = |v: f64, edge: f64| {
        if (v - edge).abs() <= SPECTRUM_SNAP {
            edge
        } else {
            v
        }
    };
    let (lo, hi) = (constraint.min_eigenvalue(), constraint.max_eigenvalue());
    Ok(AttainableRange {
        min: snap(run(Direction::Inf, "range-inf").max(lo), lo),
        max: snap(run(Direction::Sup, "range-sup").min(hi), hi),
    })
}

pub(crate) fn to_bound(
    m: &ProductManifold,
    test: &HermitianOperator,
    direction: Direction,
    local: &LocalResult,
    restarts_used: usize,
) -> Result<BoundResult> {
    let maximizer = m.product_state(&local.params)?;
    let value = expectation(test, &maximizer)?;
    Ok(BoundResult {
        value,
        direction,
        maximizer,
        feasibility_residual: local.residual,
        constraint_value: local.constraint_value,
        reference: None,
        restarts_used,
        converged: local.feasible() && value.is_finite(),
    })
}

pub(crate) fn sew_local(
    test: &TestOperator,
    layout: &Layout,
    direction: Direction,
    warm: &[Vec<f64>],
    n_random: usize,
    settings: &OptimizerSettings,
) -> Result<(BoundResult, LocalResult)> {
    check_layout(test.op(), layout)?;
    settings.validate()?;
    let m = ProductManifold::new(layout);
    let fp = fingerprint(&[test.op()]);
    let tag = match direction {
        Direction::Sup => "sew-sup",
        Direction::Inf => "sew-inf",
    };
    let (local, used) = unconstrained(
        &m,
        test.op().matrix(),
        direction,
        warm,
        n_random,
        seed_for(&fp, tag, 0.0, settings),
        settings,
    );
    let mut bound = to_bound(&m, test.op(), direction, &local, used)?;
    if layout.blocks().len() == test.dims().len() {
        if let Some(exact) = test.analytic_extremum(direction) {
            bound.reference = Some(exact);
            if (bound.value - exact).abs() > CROSS_CHECK_TOL {
                bound.converged = false;
            }
        }
    }
    Ok((bound, local))
}

/// Supremum (or infimum) of `⟨L̂⟩` over the states of `layout`; with
/// [`Layout::parties`] this is the standard witness bound `g_s`.
pub fn sew_bound(
    test: &TestOperator,
    layout: &Layout,
    direction: Direction,
    settings: &OptimizerSettings,
) -> Result<BoundResult> {
    Ok(sew_local(test, layout, direction, &[], settings.restarts, settings)?.0)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn constrained_local(
    m: &ProductManifold,
    test: &HermitianOperator,
    constraint: &HermitianOperator,
    c: f64,
    range: &AttainableRange,
    direction: Direction,
    warm: &[Vec<f64>],
    n_random: usize,
    seed: u64,
    settings: &OptimizerSettings,
) -> Result<(LocalResult, usize)> {
    let mode = range.mode(c)?;
    let problem = Problem {
        manifold: m,
        test: test.matrix(),
        direction,
        constraint: Some((constraint.matrix(), c, mode)),
    };
    Ok(problem.multistart(warm, n_random, seed, settings))
}

/// Extremum of `⟨L̂⟩` over the states of `layout` with `⟨Ĉ⟩ = c`.
pub fn constrained_extremum(
    test: &TestOperator,
    constraint: &ConstraintSpec,
    layout: &Layout,
    direction: Direction,
    settings: &OptimizerSettings,
) -> Result<BoundResult> {
    check_layout(test.op(), layout)?;
    check_layout(&constraint.op, layout)?;
    let range = attainable_range(&constraint.op, layout, settings)?;
    let m = ProductManifold::new(layout);
    let fp = fingerprint(&[test.op(), &constraint.op]);
    let tag = match direction {
        Direction::Sup => "constrained-sup",
        Direction::Inf => "constrained-inf",
    };
    let seed = seed_for(&fp, tag, constraint.value, settings);
    let (local, used) = constrained_local(
        &m,
        test.op(),
        &constraint.op,
        constraint.value,
        &range,
        direction,
        &[],
        settings.restarts,
        seed,
        settings,
    )?;
    to_bound(&m, test.op(), direction, &local, used)
}

/// `g(c) = sup ⟨L̂⟩` over pure product states with `⟨Ĉ⟩ = c`.
pub fn constrained_bound(
    test: &TestOperator,
    constraint: &ConstraintSpec,
    layout: &Layout,
    settings: &OptimizerSettings,
) -> Result<BoundResult> {
    constrained_extremum(test, constraint, layout, Direction::Sup, settings)
}

/// `Ŵ = g·Î − L̂`, non-negative on every state the bound ranges over.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessOperator {
    pub op: HermitianOperator,
    pub bound_used: f64,
    /// `⟨Ŵ⟩` on the bound's maximizer (zero at an optimal point).
    pub tangency_residual: f64,
}

pub fn witness_from_bound(test: &TestOperator, bound: &BoundResult) -> Result<WitnessOperator> {
    if !bound.converged {
        return Err(Error::Unconverged(
            "refusing to build a witness from an unconverged bound".into(),
        ));
    }
    if bound.maximizer.dims() != test.dims() {
        return Err(Error::DimensionMismatch(
            "maximizer does not match the test operator".into(),
        ));
    }
    let id = HermitianOperator::identity(test.dims())?;
    let op = id.combine(bound.value, test.op(), -1.0)?;
    let tangency_residual = expectation(&op, &bound.maximizer)?;
    Ok(WitnessOperator {
        op,
        bound_used: bound.value,
        tangency_residual,
    })
}
