//! Local and multistart optimization of expectation values over block-product
//! pure states, with an optional equality constraint on a second observable.
//!
//! A block is a group of subsystems that carries one (possibly entangled)
//! pure vector. Qubit blocks are parametrized by Bloch angles `(θ, φ)`;
//! larger blocks by an unnormalized complex vector whose first component is
//! real, normalized on evaluation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qcore::{digits, ProductState, PureState, C64};
use crate::rng;

/// A converged point must satisfy the constraint to this absolute accuracy.
pub const FEASIBILITY_TOL: f64 = 1e-6;

/// Partition of the subsystems into blocks, each block one pure factor.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    blocks: Vec<Vec<usize>>,
}

impl Layout {
    /// One block per subsystem: fully product states.
    pub fn parties(dims: &[usize]) -> Self {
        Self {
            blocks: dims.iter().map(|&d| vec![d]).collect(),
        }
    }

    /// A single block spanning every subsystem: all pure states.
    pub fn global(dims: &[usize]) -> Self {
        Self {
            blocks: vec![dims.to_vec()],
        }
    }

    pub fn new(blocks: Vec<Vec<usize>>) -> Result<Self> {
        if blocks.is_empty() || blocks.iter().any(|b| b.is_empty()) {
            return Err(Error::DimensionMismatch(
                "layout with an empty block".into(),
            ));
        }
        if blocks.iter().flatten().any(|&d| d < 2) {
            return Err(Error::DimensionMismatch("subsystem dimension < 2".into()));
        }
        Ok(Self { blocks })
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn subsystem_dims(&self) -> Vec<usize> {
        self.blocks.iter().flatten().copied().collect()
    }

    pub fn block_dims(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.iter().product()).collect()
    }

    pub fn total_dim(&self) -> usize {
        self.block_dims().iter().product()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Sup,
    Inf,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Sup => 1.0,
            Direction::Inf => -1.0,
        }
    }

    /// `true` when `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Direction::Sup => a > b,
            Direction::Inf => a < b,
        }
    }
}

/// Parametrization of a block-product pure state by a flat real vector.
#[derive(Clone, Debug)]
pub struct ProductManifold {
    layout: Layout,
    block_dims: Vec<usize>,
    offsets: Vec<usize>,
    n_params: usize,
    // Per flat basis index, the index inside every block.
    index_table: Vec<Vec<usize>>,
}

fn block_param_count(d: usize) -> usize {
    if d == 2 {
        2
    } else {
        2 * d - 1
    }
}

impl ProductManifold {
    pub fn new(layout: &Layout) -> Self {
        let block_dims = layout.block_dims();
        let mut offsets = Vec::with_capacity(block_dims.len());
        let mut n_params = 0;
        for &d in &block_dims {
            offsets.push(n_params);
            n_params += block_param_count(d);
        }
        let total: usize = block_dims.iter().product();
        let mut buf = vec![0; block_dims.len()];
        let index_table = (0..total)
            .map(|i| {
                digits(i, &block_dims, &mut buf);
                buf.clone()
            })
            .collect();
        Self {
            layout: layout.clone(),
            block_dims,
            offsets,
            n_params,
            index_table,
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn total_dim(&self) -> usize {
        self.index_table.len()
    }

    /// Uniform (Haar) random point: uniform Bloch sphere for qubits, complex
    /// Gaussian direction for larger blocks.
    pub fn random_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params);
        for &d in &self.block_dims {
            if d == 2 {
                let cos_t: f64 = rng.random_range(-1.0..=1.0);
                p.push(cos_t.clamp(-1.0, 1.0).acos());
                p.push(rng.random_range(0.0..std::f64::consts::TAU));
            } else {
                for _ in 0..block_param_count(d) {
                    p.push(rng.sample(StandardNormal));
                }
            }
        }
        p
    }

    /// Normalized block vectors and their norms (1 for qubit blocks).
    fn blocks_of(&self, p: &[f64]) -> Vec<(DVector<C64>, f64)> {
        self.block_dims
            .iter()
            .zip(&self.offsets)
            .map(|(&d, &o)| {
                if d == 2 {
                    let (t, ph) = (p[o], p[o + 1]);
                    let v = DVector::from_vec(vec![
                        C64::new((t / 2.0).cos(), 0.0),
                        C64::from_polar((t / 2.0).sin(), ph),
                    ]);
                    (v, 1.0)
                } else {
                    let raw = raw_vector(&p[o..o + block_param_count(d)], d);
                    let n = raw.norm();
                    (raw.unscale(n), n)
                }
            })
            .collect()
    }

    fn assemble(&self, blocks: &[(DVector<C64>, f64)]) -> DVector<C64> {
        DVector::from_iterator(
            self.total_dim(),
            self.index_table.iter().map(|idx| {
                idx.iter()
                    .zip(blocks)
                    .map(|(&k, (v, _))| v[k])
                    .product::<C64>()
            }),
        )
    }

    pub fn state_vector(&self, p: &[f64]) -> DVector<C64> {
        self.assemble(&self.blocks_of(p))
    }

    pub fn product_state(&self, p: &[f64]) -> Result<ProductState> {
        let factors = self
            .blocks_of(p)
            .into_iter()
            .zip(self.layout.blocks())
            .map(|((v, _), dims)| PureState::normalized(dims.clone(), v))
            .collect::<Result<Vec<_>>>()?;
        ProductState::new(factors)
    }

    /// `⟨ψ(p)|M|ψ(p)⟩` for every matrix in `ops`, with gradients when asked.
    pub fn evaluate(
        &self,
        ops: &[&DMatrix<C64>],
        p: &[f64],
        with_grad: bool,
    ) -> Vec<(f64, Vec<f64>)> {
        let blocks = self.blocks_of(p);
        let psi = self.assemble(&blocks);
        ops.iter()
            .map(|m| {
                let w = *m * &psi;
                let value = psi.dotc(&w).re;
                let grad = if with_grad {
                    self.gradient(&blocks, &w, value, p)
                } else {
                    Vec::new()
                };
                (value, grad)
            })
            .collect()
    }

    pub fn expectation(&self, op: &DMatrix<C64>, p: &[f64]) -> f64 {
        self.evaluate(&[op], p, false)[0].0
    }

    fn gradient(
        &self,
        blocks: &[(DVector<C64>, f64)],
        w: &DVector<C64>,
        value: f64,
        p: &[f64],
    ) -> Vec<f64> {
        let mut grad = vec![0.0; self.n_params];
        for (b, (&d, &o)) in self.block_dims.iter().zip(&self.offsets).enumerate() {
            // u[k] = ⟨⊗_{j≠b} ψ_j ⊗ e_k | M ψ⟩
            let mut u = vec![C64::new(0.0, 0.0); d];
            for (flat, idx) in self.index_table.iter().enumerate() {
                let mut coef = C64::new(1.0, 0.0);
                for (j, &k) in idx.iter().enumerate() {
                    if j != b {
                        coef *= blocks[j].0[k].conj();
                    }
                }
                u[idx[b]] += coef * w[flat];
            }
            let psi = &blocks[b].0;
            if d == 2 {
                let (t, ph) = (p[o], p[o + 1]);
                let (s, c) = ((t / 2.0).sin(), (t / 2.0).cos());
                let e = C64::from_polar(1.0, ph);
                let d_theta = [C64::new(-0.5 * s, 0.0), e * (0.5 * c)];
                let d_phi = [C64::new(0.0, 0.0), e * C64::new(0.0, s)];
                grad[o] = 2.0 * (u[0].conj() * d_theta[0] + u[1].conj() * d_theta[1]).re;
                grad[o + 1] = 2.0 * (u[1].conj() * d_phi[1]).re;
            } else {
                let n = blocks[b].1;
                grad[o] = 2.0 * (u[0].re - value * psi[0].re) / n;
                for k in 1..d {
                    grad[o + 2 * k - 1] = 2.0 * (u[k].re - value * psi[k].re) / n;
                    grad[o + 2 * k] = 2.0 * (u[k].im - value * psi[k].im) / n;
                }
            }
        }
        grad
    }

    /// Wrap angles and rescale vector blocks to unit norm; the state is unchanged.
    pub fn canonicalize(&self, p: &mut [f64]) {
        for (&d, &o) in self.block_dims.iter().zip(&self.offsets) {
            if d == 2 {
                p[o + 1] = p[o + 1].rem_euclid(std::f64::consts::TAU);
            } else {
                let m = block_param_count(d);
                let n = p[o..o + m].iter().map(|v| v * v).sum::<f64>().sqrt();
                if n > 0.0 {
                    p[o..o + m].iter_mut().for_each(|v| *v /= n);
                }
            }
        }
    }
}

fn raw_vector(q: &[f64], d: usize) -> DVector<C64> {
    let mut v = DVector::from_element(d, C64::new(0.0, 0.0));
    v[0] = C64::new(q[0], 0.0);
    for k in 1..d {
        v[k] = C64::new(q[2 * k - 1], q[2 * k]);
    }
    v
}

/// How the constraint `⟨C⟩ = c` enters the objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Penalty {
    None,
    /// `μ (⟨C⟩ − c)²`.
    Quadratic {
        target: f64,
        mu: f64,
    },
    /// `c` is the smallest attainable value: `μ (⟨C⟩ − c)`.
    AtMinimum {
        target: f64,
        mu: f64,
    },
    /// `c` is the largest attainable value: `μ (c − ⟨C⟩)`.
    AtMaximum {
        target: f64,
        mu: f64,
    },
}

impl Penalty {
    fn with_mu(self, mu: f64) -> Self {
        match self {
            Penalty::None => Penalty::None,
            Penalty::Quadratic { target, .. } => Penalty::Quadratic { target, mu },
            Penalty::AtMinimum { target, .. } => Penalty::AtMinimum { target, mu },
            Penalty::AtMaximum { target, .. } => Penalty::AtMaximum { target, mu },
        }
    }
}

/// Function minimized by the local solver: `−s·⟨L⟩ + penalty(⟨C⟩)` where
/// `s = ±1` selects sup or inf.
pub struct PenalizedObjective<'a> {
    manifold: &'a ProductManifold,
    test: &'a DMatrix<C64>,
    constraint: Option<&'a DMatrix<C64>>,
    direction: Direction,
    penalty: Penalty,
}

impl<'a> PenalizedObjective<'a> {
    pub fn new(
        manifold: &'a ProductManifold,
        test: &'a DMatrix<C64>,
        constraint: Option<&'a DMatrix<C64>>,
        direction: Direction,
        penalty: Penalty,
    ) -> Self {
        Self {
            manifold,
            test,
            constraint,
            direction,
            penalty,
        }
    }

    pub fn value_and_gradient(&self, p: &[f64], with_grad: bool) -> (f64, Vec<f64>) {
        let s = self.direction.sign();
        let (constraint, penalty) = match (self.constraint, self.penalty) {
            (Some(c), pen) if pen != Penalty::None => (c, pen),
            _ => {
                let (f, g) = self.manifold.evaluate(&[self.test], p, with_grad).remove(0);
                return (-s * f, g.into_iter().map(|x| -s * x).collect());
            }
        };
        let mut ev = self
            .manifold
            .evaluate(&[self.test, constraint], p, with_grad);
        let (h, gh) = ev.pop().expect("two operators");
        let (f, gf) = ev.pop().expect("two operators");
        let (pv, slope) = match penalty {
            Penalty::Quadratic { target, mu } => {
                (mu * (h - target).powi(2), 2.0 * mu * (h - target))
            }
            Penalty::AtMinimum { target, mu } => (mu * (h - target), mu),
            Penalty::AtMaximum { target, mu } => (mu * (target - h), -mu),
            Penalty::None => unreachable!(),
        };
        let grad = if with_grad {
            gf.iter()
                .zip(&gh)
                .map(|(a, b)| -s * a + slope * b)
                .collect()
        } else {
            Vec::new()
        };
        (-s * f + pv, grad)
    }

    pub fn value(&self, p: &[f64]) -> f64 {
        self.value_and_gradient(p, false).0
    }

    pub fn gradient(&self, p: &[f64]) -> Vec<f64> {
        self.value_and_gradient(p, true).1
    }
}

/// Knobs shared by every bound computation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    /// Random starts per cold optimization.
    pub restarts: usize,
    /// Random starts added to a warm start along a curve.
    pub warm_restarts: usize,
    /// Restart multiplier when a curve point is re-run.
    pub escalation: usize,
    pub mu_initial: f64,
    pub mu_final: f64,
    pub mu_growth: f64,
    pub max_iterations: usize,
    /// Extra salt mixed into every derived seed.
    pub seed: u64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            restarts: 64,
            warm_restarts: 8,
            escalation: 4,
            mu_initial: 10.0,
            mu_final: 1e6,
            mu_growth: 10.0,
            max_iterations: 2000,
            seed: 0,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::InvalidParameter("restarts must be positive".into()));
        }
        if !(self.mu_initial > 0.0 && self.mu_final >= self.mu_initial && self.mu_growth > 1.0) {
            return Err(Error::InvalidParameter("invalid penalty schedule".into()));
        }
        Ok(())
    }

    fn schedule(&self) -> Vec<f64> {
        let mut mus = Vec::new();
        let mut mu = self.mu_initial;
        while mu <= self.mu_final * (1.0 + 1e-12) {
            mus.push(mu);
            mu *= self.mu_growth;
        }
        mus
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Minimum {
    pub x: Vec<f64>,
}

/// Quasi-Newton (BFGS, inverse-Hessian form) with Armijo backtracking.
pub(crate) fn bfgs<F>(fun: F, x0: Vec<f64>, max_iter: usize) -> Minimum
where
    F: Fn(&[f64], bool) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = x0;
    let (mut f, mut g) = fun(&x, true);
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut first = true;
    let mut stalls = 0;
    for _ in 0..max_iter {
        let gnorm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !gnorm.is_finite() || gnorm <= 1e-13 * (1.0 + f.abs()) {
            break;
        }
        let gv = DVector::from_column_slice(&g);
        let mut dir = -(&h * &gv);
        let mut slope = dir.dot(&gv);
        if slope >= 0.0 {
            h = DMatrix::identity(n, n);
            dir = -gv.clone();
            slope = dir.dot(&gv);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x
                .iter()
                .zip(dir.iter())
                .map(|(a, d)| a + step * d)
                .collect();
            let (ft, gt) = fun(&trial, true);
            if ft.is_finite() && ft <= f + 1e-4 * step * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            break;
        };
        let s = DVector::from_iterator(n, xn.iter().zip(&x).map(|(a, b)| a - b));
        let y = DVector::from_iterator(n, gn.iter().zip(&g).map(|(a, b)| a - b));
        let sy = s.dot(&y);
        if sy > 1e-14 * s.norm() * y.norm() {
            if first {
                h = DMatrix::identity(n, n) * (sy / y.dot(&y));
                first = false;
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H⁺ = H − ρ(H y sᵀ + s yᵀ H) + (ρ² yᵀHy + ρ) s sᵀ
            h -= (&hy * s.transpose() + &s * hy.transpose()) * rho;
            h += (&s * s.transpose()) * (rho * rho * yhy + rho);
        }
        let decrease = f - fn_;
        x = xn;
        f = fn_;
        g = gn;
        if decrease <= 1e-16 * (1.0 + f.abs()) {
            stalls += 1;
            if stalls >= 4 {
                break;
            }
        } else {
            stalls = 0;
        }
    }
    Minimum { x }
}

/// How a constrained problem treats its target value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum ConstraintMode {
    Interior,
    AtMinimum,
    AtMaximum,
}

pub(crate) struct Problem<'a> {
    pub manifold: &'a ProductManifold,
    pub test: &'a DMatrix<C64>,
    pub direction: Direction,
    pub constraint: Option<(&'a DMatrix<C64>, f64, ConstraintMode)>,
}

#[derive(Clone, Debug)]
pub(crate) struct LocalResult {
    pub params: Vec<f64>,
    pub value: f64,
    pub constraint_value: Option<f64>,
    pub residual: f64,
}

impl LocalResult {
    pub fn feasible(&self) -> bool {
        self.residual <= FEASIBILITY_TOL
    }
}

impl Problem<'_> {
    pub fn solve_from(&self, x0: Vec<f64>, settings: &OptimizerSettings) -> LocalResult {
        let m = self.manifold;
        let mut x = x0;
        match self.constraint {
            None => {
                let obj =
                    PenalizedObjective::new(m, self.test, None, self.direction, Penalty::None);
                x = bfgs(
                    |p, g| obj.value_and_gradient(p, g),
                    x,
                    settings.max_iterations,
                )
                .x;
            }
            Some((cop, target, mode)) => {
                let base = match mode {
                    ConstraintMode::Interior => Penalty::Quadratic { target, mu: 0.0 },
                    ConstraintMode::AtMinimum => Penalty::AtMinimum { target, mu: 0.0 },
                    ConstraintMode::AtMaximum => Penalty::AtMaximum { target, mu: 0.0 },
                };
                for mu in settings.schedule() {
                    let obj = PenalizedObjective::new(
                        m,
                        self.test,
                        Some(cop),
                        self.direction,
                        base.with_mu(mu),
                    );
                    x = bfgs(
                        |p, g| obj.value_and_gradient(p, g),
                        x,
                        settings.max_iterations,
                    )
                    .x;
                    m.canonicalize(&mut x);
                }
                x = match mode {
                    ConstraintMode::Interior => project(m, cop, target, x),
                    ConstraintMode::AtMinimum | ConstraintMode::AtMaximum => {
                        let dir = if mode == ConstraintMode::AtMinimum {
                            Direction::Inf
                        } else {
                            Direction::Sup
                        };
                        let obj = PenalizedObjective::new(m, cop, None, dir, Penalty::None);
                        bfgs(
                            |p, g| obj.value_and_gradient(p, g),
                            x,
                            settings.max_iterations,
                        )
                        .x
                    }
                };
            }
        }
        m.canonicalize(&mut x);
        let (value, constraint_value, residual) = match self.constraint {
            None => (m.expectation(self.test, &x), None, 0.0),
            Some((cop, target, _)) => {
                let ev = m.evaluate(&[self.test, cop], &x, false);
                (ev[0].0, Some(ev[1].0), (ev[1].0 - target).abs())
            }
        };
        LocalResult {
            params: x,
            value,
            constraint_value,
            residual,
        }
    }

    /// Run warm starts then `n_random` random starts (stream `i` of `seed`),
    /// in parallel. The winner is the best feasible value; ties go to the
    /// lowest start index, so the result is independent of scheduling.
    pub fn multistart(
        &self,
        warm: &[Vec<f64>],
        n_random: usize,
        seed: u64,
        settings: &OptimizerSettings,
    ) -> (LocalResult, usize) {
        let total = warm.len() + n_random;
        let results: Vec<LocalResult> = (0..total)
            .into_par_iter()
            .map(|i| {
                let x0 = if i < warm.len() {
                    warm[i].clone()
                } else {
                    let mut r = rng::stream(seed, i as u64);
                    self.manifold.random_point(&mut r)
                };
                self.solve_from(x0, settings)
            })
            .collect();
        let mut best: Option<&LocalResult> = None;
        for r in &results {
            best = match best {
                None => Some(r),
                Some(b) => {
                    let replace = match (r.feasible(), b.feasible()) {
                        (true, false) => true,
                        (false, true) => false,
                        (true, true) => self.direction.better(r.value, b.value),
                        (false, false) => r.residual < b.residual,
                    };
                    Some(if replace { r } else { b })
                }
            };
        }
        (best.expect("at least one start").clone(), total)
    }
}

/// Newton steps along `∇⟨C⟩` until `⟨C⟩ = target`.
fn project(m: &ProductManifold, cop: &DMatrix<C64>, target: f64, mut x: Vec<f64>) -> Vec<f64> {
    for _ in 0..50 {
        let (h, gh) = m.evaluate(&[cop], &x, true).remove(0);
        let r = h - target;
        if r.abs() <= 1e-15 {
            break;
        }
        let g2: f64 = gh.iter().map(|v| v * v).sum();
        if g2.is_nan() || g2 <= 1e-300 {
            break;
        }
        for (xi, gi) in x.iter_mut().zip(&gh) {
            *xi -= r * gi / g2;
        }
    }
    x
}
