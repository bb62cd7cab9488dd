//! Random states, measurement simulation, estimation from counts, and the
//! independent brute-force and PPT oracles.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::povm::{Povm, ThreeOutcomeParams};
use crate::qcore::{
    expectation, is_ppt, tensor, DensityMatrix, HermitianOperator, Operator, ProductState,
    PureState, QuantumState, C64,
};
use crate::rng::{self, StreamRng};

const PROBABILITY_SUM_TOL: f64 = 1e-9;
const SCATTER_CHUNK: usize = 1024;

/// Raw joint-outcome counts. Keys are 1-based outcome labels, one per party;
/// absent cells are zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CountsFile", into = "CountsFile")]
pub struct CountsTable {
    outcome_counts: BTreeMap<Vec<usize>, u64>,
    total_shots: u64,
    outcomes_per_party: Vec<usize>,
    povm_params: Option<Vec<ThreeOutcomeParams>>,
}

/// `{ "shots": N, "parties": k, "outcomes_per_party": [...], "counts": { "1,1": n, ... } }`
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CountsFile {
    pub shots: u64,
    pub parties: usize,
    pub outcomes_per_party: Vec<usize>,
    pub counts: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub povm: Option<Vec<ThreeOutcomeParams>>,
}

impl TryFrom<CountsFile> for CountsTable {
    type Error = Error;
    fn try_from(file: CountsFile) -> Result<Self> {
        if file.parties != file.outcomes_per_party.len() {
            return Err(Error::Format(format!(
                "parties = {} but {} outcome counts listed",
                file.parties,
                file.outcomes_per_party.len()
            )));
        }
        let mut counts = BTreeMap::new();
        for (key, n) in file.counts {
            let tuple = key
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::Format(format!("bad outcome key {key:?}")))?;
            if counts.insert(tuple, n).is_some() {
                return Err(Error::Format(format!("duplicate outcome key {key:?}")));
            }
        }
        let mut table = CountsTable::new(file.outcomes_per_party, counts, file.shots)?;
        table.povm_params = file.povm;
        Ok(table)
    }
}

impl From<CountsTable> for CountsFile {
    fn from(t: CountsTable) -> Self {
        CountsFile {
            shots: t.total_shots,
            parties: t.outcomes_per_party.len(),
            outcomes_per_party: t.outcomes_per_party,
            counts: t
                .outcome_counts
                .into_iter()
                .filter(|(_, n)| *n > 0)
                .map(|(k, n)| (outcome_key(&k), n))
                .collect(),
            povm: t.povm_params,
        }
    }
}

pub fn outcome_key(outcomes: &[usize]) -> String {
    outcomes
        .iter()
        .map(|o| o.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl CountsTable {
    pub fn new(
        outcomes_per_party: Vec<usize>,
        counts: BTreeMap<Vec<usize>, u64>,
        total_shots: u64,
    ) -> Result<Self> {
        if outcomes_per_party.is_empty() || outcomes_per_party.contains(&0) {
            return Err(Error::Format(
                "every party needs at least one outcome".into(),
            ));
        }
        let mut sum: u64 = 0;
        for (k, &n) in &counts {
            check_outcomes(&outcomes_per_party, k)?;
            sum = sum
                .checked_add(n)
                .ok_or_else(|| Error::Format("count overflow".into()))?;
        }
        if sum != total_shots {
            return Err(Error::Format(format!(
                "counts sum to {sum}, shots = {total_shots}"
            )));
        }
        Ok(Self {
            outcome_counts: counts,
            total_shots,
            outcomes_per_party,
            povm_params: None,
        })
    }

    pub fn with_povm_params(mut self, params: Option<Vec<ThreeOutcomeParams>>) -> Self {
        self.povm_params = params;
        self
    }

    pub fn parties(&self) -> usize {
        self.outcomes_per_party.len()
    }

    pub fn shots(&self) -> u64 {
        self.total_shots
    }

    pub fn outcomes_per_party(&self) -> &[usize] {
        &self.outcomes_per_party
    }

    pub fn povm_params(&self) -> Option<&[ThreeOutcomeParams]> {
        self.povm_params.as_deref()
    }

    pub fn cells(&self) -> impl Iterator<Item = (&Vec<usize>, &u64)> {
        self.outcome_counts.iter()
    }

    pub fn count(&self, outcomes: &[usize]) -> Result<u64> {
        check_outcomes(&self.outcomes_per_party, outcomes)?;
        Ok(self.outcome_counts.get(outcomes).copied().unwrap_or(0))
    }

    pub fn frequency(&self, outcomes: &[usize]) -> Result<f64> {
        if self.total_shots == 0 {
            return Err(Error::Domain("counts table has zero shots".into()));
        }
        Ok(self.count(outcomes)? as f64 / self.total_shots as f64)
    }
}

fn check_outcomes(per_party: &[usize], outcomes: &[usize]) -> Result<()> {
    if outcomes.len() != per_party.len() {
        return Err(Error::InvalidIndex(format!(
            "outcome tuple {outcomes:?} for {} parties",
            per_party.len()
        )));
    }
    for (&o, &n) in outcomes.iter().zip(per_party) {
        if o == 0 || o > n {
            return Err(Error::InvalidIndex(format!(
                "outcome {o} outside 1..={n} in {outcomes:?}"
            )));
        }
    }
    Ok(())
}

/// Single-cell probability estimates with binomial standard errors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub c_hat: f64,
    pub l_hat: f64,
    pub sigma_c: f64,
    pub sigma_l: f64,
    pub shots: u64,
}

fn binomial_sigma(p: f64, shots: u64) -> f64 {
    (p * (1.0 - p) / shots as f64).max(0.0).sqrt()
}

pub fn estimate(
    counts: &CountsTable,
    c_indices: &[usize],
    l_indices: &[usize],
) -> Result<EstimateResult> {
    let c_hat = counts.frequency(c_indices)?;
    let l_hat = counts.frequency(l_indices)?;
    let n = counts.shots();
    Ok(EstimateResult {
        c_hat,
        l_hat,
        sigma_c: binomial_sigma(c_hat, n),
        sigma_l: binomial_sigma(l_hat, n),
        shots: n,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedEstimate {
    pub value: f64,
    pub sigma: f64,
}

/// `Σ βᵢ p̂ᵢ` over outcome cells, with the full multinomial variance
/// `(Σ bₖ² pₖ − (Σ bₖ pₖ)²) / n` after merging repeated cells.
pub fn estimate_weighted(
    counts: &CountsTable,
    terms: &[(f64, Vec<usize>)],
) -> Result<WeightedEstimate> {
    let mut merged: BTreeMap<&[usize], f64> = BTreeMap::new();
    for (beta, cell) in terms {
        check_outcomes(counts.outcomes_per_party(), cell)?;
        *merged.entry(cell.as_slice()).or_insert(0.0) += beta;
    }
    let mut mean = 0.0;
    let mut second = 0.0;
    for (cell, b) in merged {
        let p = counts.frequency(cell)?;
        mean += b * p;
        second += b * b * p;
    }
    let var = (second - mean * mean).max(0.0) / counts.shots() as f64;
    Ok(WeightedEstimate {
        value: mean,
        sigma: var.sqrt(),
    })
}

fn qubit(theta: f64, phi: f64) -> DVector<C64> {
    DVector::from_vec(vec![
        C64::new((theta / 2.0).cos(), 0.0),
        C64::from_polar((theta / 2.0).sin(), phi),
    ])
}

/// Haar-random pure state of one party (uniform Bloch sphere for a qubit).
pub fn sample_pure_from<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<PureState> {
    let n: usize = dims.iter().product();
    if n == 2 {
        let cos_t: f64 = rng.random_range(-1.0..=1.0);
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        return PureState::normalized(dims.to_vec(), qubit(cos_t.clamp(-1.0, 1.0).acos(), phi));
    }
    let v = DVector::from_fn(n, |_, _| {
        C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    PureState::normalized(dims.to_vec(), v)
}

pub fn sample_product_state_from<R: Rng + ?Sized>(
    dims: &[usize],
    rng: &mut R,
) -> Result<ProductState> {
    if dims.is_empty() {
        return Err(Error::DimensionMismatch("no parties".into()));
    }
    let factors = dims
        .iter()
        .map(|&d| sample_pure_from(&[d], rng))
        .collect::<Result<Vec<_>>>()?;
    ProductState::new(factors)
}

/// Random product state, one uniformly distributed factor per party.
pub fn sample_product_state(dims: &[usize], seed: u64) -> Result<ProductState> {
    sample_product_state_from(dims, &mut rng::stream(seed, 0))
}

/// Hilbert–Schmidt random density matrix `G G† / Tr(G G†)`.
pub fn random_density_matrix<R: Rng + ?Sized>(
    dims: &[usize],
    rng: &mut R,
) -> Result<DensityMatrix> {
    let n: usize = dims.iter().product();
    let g = DMatrix::from_fn(n, n, |_, _| {
        C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    let mut m = &g * g.adjoint();
    let tr = m.trace().re;
    m.unscale_mut(tr);
    // Symmetrize the rounding noise away.
    let m = (&m + m.adjoint()) * C64::new(0.5, 0.0);
    DensityMatrix::new(HermitianOperator::new(Operator::new(dims.to_vec(), m)?)?)
}

/// `(⟨C⟩, ⟨L⟩)` for `n` random product states. Chunk `i` of 1024 samples
/// draws from stream `i`, so output is independent of the thread count.
pub fn scatter(
    l: &HermitianOperator,
    c: &HermitianOperator,
    n: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    if l.dims() != c.dims() {
        return Err(Error::DimensionMismatch(
            "test and constraint dims differ".into(),
        ));
    }
    let dims = l.dims().to_vec();
    let chunks = n.div_ceil(SCATTER_CHUNK);
    let parts: Vec<Result<Vec<(f64, f64)>>> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::stream(seed, k as u64);
            let len = SCATTER_CHUNK.min(n - k * SCATTER_CHUNK);
            (0..len)
                .map(|_| {
                    let s = sample_product_state_from(&dims, &mut r)?.to_pure();
                    Ok((expectation(c, &s)?, expectation(l, &s)?))
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(n);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Every joint-outcome tuple in lexicographic order with its probability
/// `Tr(ρ ⊗ᵢ Eᵢ)`.
pub fn outcome_probabilities(
    rho: &DensityMatrix,
    povms: &[&Povm],
) -> Result<Vec<(Vec<usize>, f64)>> {
    let party_dims: Vec<usize> = povms
        .iter()
        .flat_map(|p| p.dims().iter().copied())
        .collect();
    if party_dims != rho.dims() {
        return Err(Error::DimensionMismatch(format!(
            "state dims {:?}, POVM dims {:?}",
            rho.dims(),
            party_dims
        )));
    }
    let sizes: Vec<usize> = povms.iter().map(|p| p.num_outcomes()).collect();
    let total: usize = sizes.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut tuple = vec![0; sizes.len()];
    for flat in 0..total {
        crate::qcore::digits(flat, &sizes, &mut tuple);
        let labels: Vec<usize> = tuple.iter().map(|t| t + 1).collect();
        let ops = povms
            .iter()
            .zip(&labels)
            .map(|(p, &o)| p.effect(o).map(|e| e.operator().operator()))
            .collect::<Result<Vec<_>>>()?;
        let op = tensor(&ops)?;
        out.push((labels, rho.expect_matrix(op.matrix()).re));
    }
    let sum: f64 = out.iter().map(|(_, p)| p).sum();
    if (sum - 1.0).abs() > PROBABILITY_SUM_TOL {
        return Err(Error::Domain(format!("outcome probabilities sum to {sum}")));
    }
    for (k, p) in &mut out {
        if *p < -PROBABILITY_SUM_TOL {
            return Err(Error::Domain(format!("negative probability {p} for {k:?}")));
        }
        *p = p.max(0.0);
    }
    Ok(out)
}

/// Multinomial sample of `shots` joint outcomes (sequential conditional binomials).
pub fn simulate_counts(
    rho: &DensityMatrix,
    povms: &[&Povm],
    shots: u64,
    seed: u64,
) -> Result<CountsTable> {
    if shots == 0 {
        return Err(Error::InvalidParameter("shots must be at least 1".into()));
    }
    let probs = outcome_probabilities(rho, povms)?;
    let mut r: StreamRng = rng::stream(seed, 0);
    let mut remaining = shots;
    let mut mass: f64 = probs.iter().map(|(_, p)| p).sum();
    let mut counts = BTreeMap::new();
    let last = probs.len() - 1;
    for (i, (cell, p)) in probs.into_iter().enumerate() {
        let n = if i == last {
            remaining
        } else if remaining == 0 || p <= 0.0 {
            0
        } else {
            let q = (p / mass).clamp(0.0, 1.0);
            Binomial::new(remaining, q)
                .map_err(|e| Error::Domain(format!("binomial parameters: {e}")))?
                .sample(&mut r)
        };
        remaining -= n;
        mass -= p;
        counts.insert(cell, n);
    }
    let params: Option<Vec<ThreeOutcomeParams>> =
        povms.iter().map(|p| p.params().copied()).collect();
    Ok(CountsTable::new(
        povms.iter().map(|p| p.num_outcomes()).collect(),
        counts,
        shots,
    )?
    .with_povm_params(params))
}

/// Peres–Horodecki audit: positive partial transpose across every single-party cut.
pub fn ppt_oracle(rho: &DensityMatrix) -> Result<bool> {
    for party in 0..rho.dims().len() {
        if !is_ppt(rho, party)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Quadratic form `⟨b|M|b⟩ = A + B cos t + D sin t` of a 2×2 Hermitian `M`
/// along the Bloch polar angle `t` at azimuth `φ`.
#[derive(Clone, Copy)]
struct Trig {
    a: f64,
    b: f64,
    d: f64,
}

impl Trig {
    fn new(m: &[[C64; 2]; 2], phi: f64) -> Self {
        Trig {
            a: 0.5 * (m[0][0].re + m[1][1].re),
            b: 0.5 * (m[0][0].re - m[1][1].re),
            d: (m[0][1] * C64::from_polar(1.0, phi)).re,
        }
    }

    fn at(&self, t: f64) -> f64 {
        self.a + self.b * t.cos() + self.d * t.sin()
    }
}

/// `⟨a|_A M |a⟩_A`, the operator left on the second qubit.
fn reduce_first(m: &DMatrix<C64>, a: &DVector<C64>) -> [[C64; 2]; 2] {
    let mut out = [[C64::new(0.0, 0.0); 2]; 2];
    for (k, row) in out.iter_mut().enumerate() {
        for (l, slot) in row.iter_mut().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for i in 0..2 {
                for j in 0..2 {
                    acc += a[i].conj() * m[(2 * i + k, 2 * j + l)] * a[j];
                }
            }
            *slot = acc;
        }
    }
    out
}

#[derive(Clone, Copy, Debug)]
struct GridPoint {
    value: f64,
    theta_a: f64,
    phi_a: f64,
    phi_b: f64,
    t: f64,
}

/// Solve `⟨C⟩ = c` for the polar angle of the second qubit. Roots nearest
/// `hint` first; a `C` that does not depend on that angle admits `hint` itself.
fn feasible_angles(ct: &Trig, c: f64, hint: f64) -> Vec<f64> {
    let r = ct.b.hypot(ct.d);
    if r < 1e-14 {
        return if (ct.a - c).abs() <= 1e-12 {
            vec![hint]
        } else {
            Vec::new()
        };
    }
    let ratio = (c - ct.a) / r;
    if ratio.abs() > 1.0 + 1e-12 {
        return Vec::new();
    }
    let base = ct.d.atan2(ct.b);
    let spread = ratio.clamp(-1.0, 1.0).acos();
    let mut roots = vec![base + spread, base - spread];
    let dist = |t: f64| {
        let d = (t - hint).rem_euclid(std::f64::consts::TAU);
        d.min(std::f64::consts::TAU - d)
    };
    roots.sort_by(|x, y| dist(*x).total_cmp(&dist(*y)));
    roots
}

fn evaluate_point(
    l: &DMatrix<C64>,
    c: &DMatrix<C64>,
    target: f64,
    theta_a: f64,
    phi_a: f64,
    phi_b: f64,
    hint: f64,
) -> Option<GridPoint> {
    let a = qubit(theta_a, phi_a);
    let ct = Trig::new(&reduce_first(c, &a), phi_b);
    let lt = Trig::new(&reduce_first(l, &a), phi_b);
    let t = *feasible_angles(&ct, target, hint).first()?;
    Some(GridPoint {
        value: lt.at(t),
        theta_a,
        phi_a,
        phi_b,
        t,
    })
}

fn grid_search(
    l: &DMatrix<C64>,
    c: &DMatrix<C64>,
    target: f64,
    res: usize,
    eps: f64,
) -> Option<GridPoint> {
    let thetas: Vec<f64> = (0..res)
        .map(|i| std::f64::consts::PI * i as f64 / (res - 1) as f64)
        .collect();
    let phis: Vec<f64> = (0..res)
        .map(|j| std::f64::consts::TAU * j as f64 / res as f64)
        .collect();
    let rows: Vec<Option<GridPoint>> = thetas
        .par_iter()
        .map(|&ta| {
            let mut best: Option<GridPoint> = None;
            for &pa in &phis {
                let a = qubit(ta, pa);
                let cr = reduce_first(c, &a);
                let lr = reduce_first(l, &a);
                for &pb in &phis {
                    let ct = Trig::new(&cr, pb);
                    let lt = Trig::new(&lr, pb);
                    let r = ct.b.hypot(ct.d);
                    let candidates: Vec<f64> = if r < 1e-14 {
                        if (ct.a - target).abs() < eps {
                            thetas.clone()
                        } else {
                            Vec::new()
                        }
                    } else {
                        feasible_angles(&ct, target, 0.0)
                    };
                    for t in candidates {
                        if (ct.at(t) - target).abs() >= eps {
                            continue;
                        }
                        let v = lt.at(t);
                        if best.is_none_or(|b| v > b.value) {
                            best = Some(GridPoint {
                                value: v,
                                theta_a: ta,
                                phi_a: pa,
                                phi_b: pb,
                                t,
                            });
                        }
                    }
                }
            }
            best
        })
        .collect();
    rows.into_iter()
        .flatten()
        .fold(None, |acc: Option<GridPoint>, p| match acc {
            Some(b) if b.value >= p.value => Some(b),
            _ => Some(p),
        })
}

/// Derivative-free compass search over `(θ_a, φ_a, φ_b, t)` with `t`
/// re-solved from the constraint at every trial point.
fn polish(
    l: &DMatrix<C64>,
    c: &DMatrix<C64>,
    target: f64,
    start: GridPoint,
    step0: f64,
) -> GridPoint {
    let mut best = start;
    let mut step = step0;
    while step > 1e-11 {
        let mut improved = false;
        for axis in 0..4 {
            for sign in [1.0, -1.0] {
                let mut v = [best.theta_a, best.phi_a, best.phi_b, best.t];
                v[axis] += sign * step;
                if let Some(p) = evaluate_point(l, c, target, v[0], v[1], v[2], v[3]) {
                    if p.value > best.value + 1e-15 {
                        best = p;
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    best
}

/// Independent oracle for the two-qubit constrained supremum
/// `sup ⟨a,b|L|a,b⟩` subject to `⟨a,b|C|a,b⟩ = c`.
///
/// Three Bloch angles are gridded with `resolution` points each and the
/// fourth (the polar angle of the eliminated qubit) is solved from the
/// constraint in closed form; both elimination orders are tried. Grid points
/// must satisfy `|⟨C⟩ − c| < 2/resolution`. The best grid point is refined by
/// a compass search that keeps the constraint exact. Accuracy is
/// `O(1/resolution)` before refinement.
pub fn brute_force_constrained_sup(
    l: &HermitianOperator,
    c: &HermitianOperator,
    target: f64,
    resolution: usize,
) -> Result<f64> {
    if l.dims() != [2, 2] || c.dims() != [2, 2] {
        return Err(Error::DimensionMismatch(
            "brute force needs two qubit parties".into(),
        ));
    }
    if !(2..=400).contains(&resolution) {
        return Err(Error::InvalidParameter(format!(
            "resolution {resolution} outside 2..=400"
        )));
    }
    let eps = 2.0 / resolution as f64;
    let step = std::f64::consts::PI / (resolution - 1) as f64;
    let swap = [1, 0];
    let l_sw = l.permute_subsystems(&swap)?;
    let c_sw = c.permute_subsystems(&swap)?;
    let mut best: Option<f64> = None;
    for (lm, cm) in [(l.matrix(), c.matrix()), (l_sw.matrix(), c_sw.matrix())] {
        if let Some(p) = grid_search(lm, cm, target, resolution, eps) {
            let refined = polish(lm, cm, target, p, step);
            best = Some(best.map_or(refined.value, |b: f64| b.max(refined.value)));
        }
    }
    best.ok_or_else(|| Error::Domain(format!("no product state reaches ⟨C⟩ = {target}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::povm::{build_three_outcome, product_operator};

    fn pair_ops(x: f64) -> (HermitianOperator, HermitianOperator, Povm) {
        let povm = build_three_outcome(ThreeOutcomeParams::new(x, 0.0).unwrap()).unwrap();
        let l = product_operator(&[&povm, &povm], &[2, 2]).unwrap();
        let c = product_operator(&[&povm, &povm], &[1, 1]).unwrap();
        (l, c, povm)
    }

    #[test]
    fn uniform_sphere_moments() {
        let mut r = rng::stream(42, 0);
        let povm = build_three_outcome(ThreeOutcomeParams::new(2.0 / 3.0, 0.0).unwrap()).unwrap();
        let pi1 = povm.effect(1).unwrap().operator().clone();
        let z = HermitianOperator::diagonal(&[2], &[1.0, -1.0]).unwrap();
        let n = 100_000;
        let (mut sz, mut sp) = (0.0, 0.0);
        for _ in 0..n {
            let s = sample_pure_from(&[2], &mut r).unwrap();
            sz += expectation(&z, &s).unwrap();
            sp += expectation(&pi1, &s).unwrap();
        }
        assert!((sz / n as f64).abs() < 0.01);
        assert!((sp / n as f64 - 1.0 / 3.0).abs() < 0.005);
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_product_state(&[2, 2], 5).unwrap();
        let b = sample_product_state(&[2, 2], 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_product_state(&[2, 2], 6).unwrap());
    }

    #[test]
    fn scatter_respects_operator_range() {
        let (l, c, _) = pair_ops(2.0 / 3.0);
        let pts = scatter(&l, &c, 3000, 1).unwrap();
        assert_eq!(pts.len(), 3000);
        assert!(pts
            .iter()
            .all(|&(cv, lv)| (-1e-15..=4.0 / 9.0 + 1e-15).contains(&cv)
                && (-1e-15..=4.0 / 9.0 + 1e-12).contains(&lv)));
        assert_eq!(pts, scatter(&l, &c, 3000, 1).unwrap());
    }

    #[test]
    fn outcome_probabilities_of_reference_states() {
        let (_, _, povm) = pair_ops(2.0 / 3.0);
        let mixed = DensityMatrix::maximally_mixed(&[2, 2]).unwrap();
        let probs = outcome_probabilities(&mixed, &[&povm, &povm]).unwrap();
        assert_eq!(probs.len(), 9);
        assert_eq!(probs[0].0, vec![1, 1]);
        assert!((probs[0].1 - 1.0 / 9.0).abs() < 1e-14);

        let vv = PureState::basis(&[2, 2], 3).unwrap().to_density();
        let probs = outcome_probabilities(&vv, &[&povm, &povm]).unwrap();
        let get = |k: [usize; 2]| probs.iter().find(|(c, _)| c == &k).unwrap().1;
        assert!((get([1, 1]) - 4.0 / 9.0).abs() < 1e-14);
        assert!((get([2, 2]) - 1.0 / 36.0).abs() < 1e-14);
    }

    #[test]
    fn simulated_frequencies_converge() {
        let (_, _, povm) = pair_ops(2.0 / 3.0);
        let vv = PureState::basis(&[2, 2], 3).unwrap().to_density();
        let shots = 1_000_000;
        let counts = simulate_counts(&vv, &[&povm, &povm], shots, 3).unwrap();
        assert_eq!(counts.shots(), shots);
        for (cell, p) in outcome_probabilities(&vv, &[&povm, &povm]).unwrap() {
            let f = counts.frequency(&cell).unwrap();
            let sigma = binomial_sigma(p, shots).max(1e-12);
            assert!((f - p).abs() <= 5.0 * sigma, "{cell:?}: {f} vs {p}");
        }
        assert_eq!(
            counts,
            simulate_counts(&vv, &[&povm, &povm], shots, 3).unwrap()
        );
        assert!(simulate_counts(&vv, &[&povm, &povm], 0, 3).is_err());
    }

    #[test]
    fn estimate_formula() {
        let mut cells = BTreeMap::new();
        cells.insert(vec![1, 1], 111);
        cells.insert(vec![2, 3], 889);
        let counts = CountsTable::new(vec![3, 3], cells, 1000).unwrap();
        let e = estimate(&counts, &[1, 1], &[2, 2]).unwrap();
        assert!((e.c_hat - 0.111).abs() < 1e-15);
        assert!((e.sigma_c - (0.111f64 * 0.889 / 1000.0).sqrt()).abs() < 1e-15);
        assert!((e.sigma_c - 0.00993).abs() < 1e-5);
        assert_eq!(e.l_hat, 0.0);

        let mut cells = BTreeMap::new();
        cells.insert(vec![2, 2], 500);
        let counts = CountsTable::new(vec![3, 3], cells, 500).unwrap();
        let e = estimate(&counts, &[1, 1], &[2, 2]).unwrap();
        assert_eq!((e.l_hat, e.sigma_l), (1.0, 0.0));
    }

    #[test]
    fn zero_shots_rejected() {
        let counts = CountsTable::new(vec![3, 3], BTreeMap::new(), 0).unwrap();
        assert!(matches!(
            estimate(&counts, &[1, 1], &[2, 2]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn weighted_estimate_uses_multinomial_covariance() {
        let mut cells = BTreeMap::new();
        cells.insert(vec![1, 1], 300);
        cells.insert(vec![2, 2], 700);
        let counts = CountsTable::new(vec![3, 3], cells, 1000).unwrap();
        // β = (1, −1): p₁ − p₂ with Var = (p₁ + p₂ − (p₁ − p₂)²)/n.
        let w = estimate_weighted(&counts, &[(1.0, vec![1, 1]), (-1.0, vec![2, 2])]).unwrap();
        assert!((w.value + 0.4).abs() < 1e-15);
        assert!((w.sigma - ((1.0 - 0.16) / 1000.0f64).sqrt()).abs() < 1e-15);
        // Repeated cells merge before the variance is formed.
        let w2 = estimate_weighted(&counts, &[(0.5, vec![1, 1]), (0.5, vec![1, 1])]).unwrap();
        let e = estimate(&counts, &[1, 1], &[2, 2]).unwrap();
        assert!((w2.sigma - e.sigma_c).abs() < 1e-15);
    }

    #[test]
    fn counts_file_validation() {
        let ok = r#"{ "shots": 10, "parties": 2, "outcomes_per_party": [3,3], "counts": { "1,1": 4, "2,2": 6 } }"#;
        let t: CountsTable = serde_json::from_str(ok).unwrap();
        assert_eq!(t.count(&[3, 3]).unwrap(), 0);
        assert_eq!(t.count(&[2, 2]).unwrap(), 6);
        let bad_sum = ok.replace("\"shots\": 10", "\"shots\": 11");
        assert!(serde_json::from_str::<CountsTable>(&bad_sum).is_err());
        let bad_key = ok.replace("\"2,2\"", "\"2,4\"");
        assert!(serde_json::from_str::<CountsTable>(&bad_key).is_err());
        let bad_arity = ok.replace("\"2,2\"", "\"2\"");
        assert!(serde_json::from_str::<CountsTable>(&bad_arity).is_err());
        let text = serde_json::to_string(&t).unwrap();
        assert_eq!(serde_json::from_str::<CountsTable>(&text).unwrap(), t);
    }

    #[test]
    fn ppt_oracle_cases() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let bell = PureState::new(
            vec![2, 2],
            DVector::from_vec(vec![
                C64::new(s, 0.0),
                C64::new(0.0, 0.0),
                C64::new(0.0, 0.0),
                C64::new(s, 0.0),
            ]),
        )
        .unwrap();
        assert!(!ppt_oracle(&bell.to_density()).unwrap());
        let mut r = rng::stream(8, 0);
        for _ in 0..100 {
            let p = sample_product_state_from(&[2, 2], &mut r).unwrap();
            assert!(ppt_oracle(&p.to_density()).unwrap());
        }
    }

    #[test]
    fn brute_force_reference_values() {
        let (l, c, _) = pair_ops(2.0 / 3.0);
        let g0 = brute_force_constrained_sup(&l, &c, 0.0, 200).unwrap();
        assert!((g0 - 1.0 / 3.0).abs() < 2e-3, "{g0}");
        let g_top = brute_force_constrained_sup(&l, &c, 4.0 / 9.0, 200).unwrap();
        assert!((g_top - 1.0 / 36.0).abs() < 2e-3, "{g_top}");
        let g_same = brute_force_constrained_sup(&c, &c, 0.2, 60).unwrap();
        assert!((g_same - 0.2).abs() < 1e-12);
        assert!(matches!(
            brute_force_constrained_sup(&l, &c, 0.5, 50),
            Err(Error::Domain(_))
        ));
        assert!(brute_force_constrained_sup(&l, &c, 0.1, 500).is_err());
    }
}
