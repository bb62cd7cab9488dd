//! Separability curves `g(c)` and the detection test built on them.
//!
//! Grid values come from the pure-product optimizer. Separable states are
//! mixtures of pure product states, so the separable bound at `c` is the
//! upper concave envelope of the pure-product curve; queries evaluate that
//! hull. Between hull vertices a concave function can rise above the chord,
//! so detection uses the tighter of the two neighbouring chords extended
//! into the gap, capped at the global bound `g_s`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    attainable_range, constrained_local, fingerprint, seed_for, sew_local, to_bound, TestOperator,
    RANGE_TOL,
};
use crate::error::{Error, Result};
use crate::numfmt::fmt_sig;
use crate::optim::{Direction, Layout, LocalResult, OptimizerSettings, ProductManifold};
use crate::qcore::HermitianOperator;

/// Tolerance of the three-point chord test.
pub const CHORD_TOL: f64 = 1e-6;
const REPAIR_PASSES: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub c: f64,
    pub g: f64,
    pub converged: bool,
    pub restarts: usize,
    pub residual: f64,
}

/// Unconstrained optimum `(⟨Ĉ⟩, g_s)` at the standard witness's optimal point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SewPoint {
    pub c: f64,
    pub g: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityCurve {
    points: Vec<CurvePoint>,
    sew: Option<SewPoint>,
    operator_fingerprint: String,
    optimizer_settings: OptimizerSettings,
    reliable: bool,
    concavity_violations: Vec<usize>,
}

fn line_at(a: (f64, f64), b: (f64, f64), c: f64) -> f64 {
    a.1 + (b.1 - a.1) * (c - a.0) / (b.0 - a.0)
}

impl SeparabilityCurve {
    pub fn from_points(
        points: Vec<CurvePoint>,
        sew: Option<SewPoint>,
        operator_fingerprint: String,
        optimizer_settings: OptimizerSettings,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Domain("a curve needs at least one point".into()));
        }
        if points.iter().any(|p| !p.c.is_finite() || !p.g.is_finite()) {
            return Err(Error::NonFinite("curve point"));
        }
        if points.windows(2).any(|w| w[1].c <= w[0].c) {
            return Err(Error::Domain(
                "curve abscissae must be strictly increasing".into(),
            ));
        }
        let mut curve = Self {
            reliable: points.iter().all(|p| p.converged),
            points,
            sew,
            operator_fingerprint,
            optimizer_settings,
            concavity_violations: Vec::new(),
        };
        curve.concavity_violations = curve.chord_violations(CHORD_TOL);
        Ok(curve)
    }

    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }

    pub fn sew(&self) -> Option<SewPoint> {
        self.sew
    }

    pub fn operator_fingerprint(&self) -> &str {
        &self.operator_fingerprint
    }

    pub fn optimizer_settings(&self) -> &OptimizerSettings {
        &self.optimizer_settings
    }

    pub fn is_reliable(&self) -> bool {
        self.reliable
    }

    /// Interior grid indices failing the chord test after repair.
    pub fn concavity_violations(&self) -> &[usize] {
        &self.concavity_violations
    }

    pub fn range(&self) -> (f64, f64) {
        (self.points[0].c, self.points[self.points.len() - 1].c)
    }

    /// Location and value of the curve maximum.
    pub fn peak(&self) -> SewPoint {
        let best = self
            .points
            .iter()
            .fold(&self.points[0], |b, p| if p.g > b.g { p } else { b });
        match self.sew {
            Some(s) if s.g >= best.g => s,
            _ => SewPoint {
                c: best.c,
                g: best.g,
            },
        }
    }

    /// Grid points plus the SEW point when it falls inside the grid range.
    fn nodes(&self) -> Vec<(f64, f64)> {
        let mut nodes: Vec<(f64, f64)> = self.points.iter().map(|p| (p.c, p.g)).collect();
        let (lo, hi) = self.range();
        if let Some(s) = self.sew {
            if s.c >= lo && s.c <= hi {
                match nodes.binary_search_by(|n| n.0.total_cmp(&s.c)) {
                    Ok(i) => nodes[i].1 = nodes[i].1.max(s.g),
                    Err(i) => nodes.insert(i, (s.c, s.g)),
                }
            }
        }
        nodes
    }

    /// Vertices of the upper concave hull of the nodes.
    pub fn hull(&self) -> Vec<(f64, f64)> {
        let mut hull: Vec<(f64, f64)> = Vec::new();
        for p in self.nodes() {
            while hull.len() >= 2 {
                let (o, a) = (hull[hull.len() - 2], hull[hull.len() - 1]);
                let cross = (a.0 - o.0) * (p.1 - o.1) - (a.1 - o.1) * (p.0 - o.0);
                if cross >= 0.0 {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(p);
        }
        hull
    }

    fn check_in_range(&self, c: f64) -> Result<f64> {
        let (lo, hi) = self.range();
        if !c.is_finite() {
            return Err(Error::NonFinite("curve abscissa"));
        }
        if c < lo - RANGE_TOL || c > hi + RANGE_TOL {
            return Err(Error::Domain(format!(
                "c = {c} outside the curve range [{lo}, {hi}]"
            )));
        }
        Ok(c.clamp(lo, hi))
    }

    fn segment(hull: &[(f64, f64)], c: f64) -> usize {
        let i = hull.partition_point(|v| v.0 <= c);
        i.saturating_sub(1).min(hull.len().saturating_sub(2))
    }

    /// Separable bound at `c`: the concave hull of the computed curve.
    pub fn value(&self, c: f64) -> Result<f64> {
        let c = self.check_in_range(c)?;
        let hull = self.hull();
        if hull.len() == 1 {
            return Ok(hull[0].1);
        }
        let i = Self::segment(&hull, c);
        Ok(line_at(hull[i], hull[i + 1], c))
    }

    /// Largest value any concave function through the hull vertices can
    /// take at `c`, capped at the global maximum.
    pub fn upper_value(&self, c: f64) -> Result<f64> {
        let c = self.check_in_range(c)?;
        Ok(self.upper_at(&self.hull(), c))
    }

    fn upper_at(&self, hull: &[(f64, f64)], c: f64) -> f64 {
        if hull.len() == 1 {
            return hull[0].1;
        }
        let i = Self::segment(hull, c);
        if let Some(v) = [hull[i], hull[i + 1]].iter().find(|v| v.0 == c) {
            return v.1;
        }
        let chord = line_at(hull[i], hull[i + 1], c);
        let mut bound = f64::INFINITY;
        if i >= 1 {
            bound = bound.min(line_at(hull[i - 1], hull[i], c));
        }
        if i + 2 < hull.len() {
            bound = bound.min(line_at(hull[i + 1], hull[i + 2], c));
        }
        if let Some(s) = self.sew {
            bound = bound.min(s.g.max(self.peak().g));
        }
        if bound.is_finite() {
            bound.max(chord)
        } else {
            chord
        }
    }

    /// Maximum of the hull over `[lo, hi]`.
    pub fn max_over(&self, lo: f64, hi: f64) -> Result<f64> {
        let (lo, hi) = (self.check_in_range(lo)?, self.check_in_range(hi)?);
        if lo > hi {
            return Err(Error::Domain(format!("empty interval [{lo}, {hi}]")));
        }
        let hull = self.hull();
        let mut best = self.value(lo)?.max(self.value(hi)?);
        for v in hull.iter().filter(|v| v.0 > lo && v.0 < hi) {
            best = best.max(v.1);
        }
        Ok(best)
    }

    /// Maximum of [`upper_value`](Self::upper_value) over `[lo, hi]`.
    fn upper_max_over(&self, lo: f64, hi: f64) -> f64 {
        let hull = self.hull();
        let mut cands = vec![lo, hi];
        cands.extend(hull.iter().map(|v| v.0).filter(|&c| c > lo && c < hi));
        // Apex of the two extended chords inside each gap.
        for i in 1..hull.len().saturating_sub(2) {
            let (a, b, p, q) = (hull[i - 1], hull[i], hull[i + 1], hull[i + 2]);
            let s1 = (b.1 - a.1) / (b.0 - a.0);
            let s2 = (q.1 - p.1) / (q.0 - p.0);
            if s1 != s2 {
                let c = (p.1 - b.1 + s1 * b.0 - s2 * p.0) / (s1 - s2);
                if c > lo && c < hi {
                    cands.push(c);
                }
            }
        }
        cands
            .into_iter()
            .map(|c| self.upper_at(&hull, c.clamp(hull[0].0, hull[hull.len() - 1].0)))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Middle indices of grid triples whose middle value lies more than
    /// `tol` below the chord of its neighbours.
    pub fn chord_violations(&self, tol: f64) -> Vec<usize> {
        self.points
            .windows(3)
            .enumerate()
            .filter(|(_, w)| {
                let chord = line_at((w[0].c, w[0].g), (w[2].c, w[2].g), w[1].c);
                w[1].g < chord - tol
            })
            .map(|(i, _)| i + 1)
            .collect()
    }

    /// `c,g,converged,restarts`, one row per grid point in ascending `c`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("c,g,converged,restarts\n");
        for p in &self.points {
            writeln!(
                out,
                "{},{},{},{}",
                fmt_sig(p.c),
                fmt_sig(p.g),
                p.converged,
                p.restarts
            )
            .expect("writing to a String");
        }
        out
    }

    /// Read a curve written by [`to_csv`](Self::to_csv).
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty curve file".into()))?;
        if header.trim() != "c,g,converged,restarts" {
            return Err(Error::Format(format!("unexpected curve header {header:?}")));
        }
        let mut points = Vec::new();
        for (n, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = || Error::Format(format!("curve row {}: {line:?}", n + 1));
            if f.len() != 4 {
                return Err(bad());
            }
            points.push(CurvePoint {
                c: f[0].parse().map_err(|_| bad())?,
                g: f[1].parse().map_err(|_| bad())?,
                converged: f[2].parse().map_err(|_| bad())?,
                restarts: f[3].parse().map_err(|_| bad())?,
                residual: 0.0,
            });
        }
        Self::from_points(points, None, String::new(), OptimizerSettings::default())
    }
}

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo.is_finite() && hi.is_finite()) || hi < lo {
        return Err(Error::InvalidParameter(format!(
            "bad grid range [{lo}, {hi}]"
        )));
    }
    match n {
        0 => Err(Error::InvalidParameter(
            "grid needs at least one point".into(),
        )),
        1 => Ok(vec![lo]),
        _ if hi == lo => Err(Error::InvalidParameter(
            "degenerate range for a multi-point grid".into(),
        )),
        _ => Ok((0..n)
            .map(|i| {
                if i == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect()),
    }
}

/// `g(c)` on `grid`, warm-starting each point from its predecessor and the
/// SEW optimum. Grid triples failing the chord test are re-run with
/// escalated restarts; any point still unconverged marks the curve
/// unreliable.
pub fn separability_curve(
    test: &TestOperator,
    constraint: &HermitianOperator,
    grid: &[f64],
    layout: &Layout,
    settings: &OptimizerSettings,
) -> Result<SeparabilityCurve> {
    settings.validate()?;
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty grid".into()));
    }
    if grid.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("grid value"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(
            "grid must be strictly increasing".into(),
        ));
    }
    let range = attainable_range(constraint, layout, settings)?;
    if let Some(c) = grid.iter().find(|&&c| !range.contains(c)) {
        return Err(Error::Domain(format!(
            "grid value {c} outside the attainable range [{}, {}]",
            range.min, range.max
        )));
    }
    let fp = fingerprint(&[test.op(), constraint]);
    let m = ProductManifold::new(layout);
    let (sew_bound, mut sew_opt) = sew_local(
        test,
        layout,
        Direction::Sup,
        &[],
        settings.restarts,
        settings,
    )?;
    let sew_c = m.expectation(constraint.matrix(), &sew_opt.params);
    let mut sew = SewPoint {
        c: sew_c,
        g: sew_bound.value,
    };
    let mut sew_ok = sew_bound.converged;

    let solve = |c: f64, warm: &[Vec<f64>], n_random: usize| {
        constrained_local(
            &m,
            test.op(),
            constraint,
            c,
            &range,
            Direction::Sup,
            warm,
            n_random,
            seed_for(&fp, "curve", c, settings),
            settings,
        )
    };

    let mut locals: Vec<LocalResult> = Vec::with_capacity(grid.len());
    let mut used: Vec<usize> = Vec::with_capacity(grid.len());
    for (i, &c) in grid.iter().enumerate() {
        let mut warm = vec![sew_opt.params.clone()];
        if let Some(prev) = locals.last() {
            warm.insert(0, prev.params.clone());
        }
        let n_random = if i == 0 || i + 1 == grid.len() {
            settings.restarts
        } else {
            settings.warm_restarts
        };
        let (r, n) = solve(c, &warm, n_random)?;
        locals.push(r);
        used.push(n);
    }

    let build = |locals: &[LocalResult], used: &[usize]| -> Result<Vec<CurvePoint>> {
        grid.iter()
            .zip(locals.iter().zip(used))
            .map(|(&c, (r, &n))| {
                let b = to_bound(&m, test.op(), Direction::Sup, r, n)?;
                Ok(CurvePoint {
                    c,
                    g: b.value,
                    converged: b.converged,
                    restarts: n,
                    residual: b.feasibility_residual,
                })
            })
            .collect()
    };

    let boosted = settings.restarts * settings.escalation.max(1);
    for _ in 0..REPAIR_PASSES {
        let points = build(&locals, &used)?;
        let probe =
            SeparabilityCurve::from_points(points.clone(), None, String::new(), settings.clone())?;
        let mut suspects: Vec<usize> = probe.chord_violations(CHORD_TOL);
        suspects.extend(
            points
                .iter()
                .enumerate()
                .filter(|(_, p)| !p.converged)
                .map(|(i, _)| i),
        );
        suspects.sort_unstable();
        suspects.dedup();
        if suspects.is_empty() {
            break;
        }
        for i in suspects {
            let mut warm = vec![locals[i].params.clone(), sew_opt.params.clone()];
            if i > 0 {
                warm.push(locals[i - 1].params.clone());
            }
            if i + 1 < locals.len() {
                warm.push(locals[i + 1].params.clone());
            }
            let (r, n) = solve(grid[i], &warm, boosted)?;
            used[i] += n;
            let better = match (r.feasible(), locals[i].feasible()) {
                (true, false) => true,
                (true, true) => r.value > locals[i].value,
                (false, _) => false,
            };
            if better {
                locals[i] = r;
            }
        }
    }

    let points = build(&locals, &used)?;
    // Any feasible point above g_s means the unconstrained search fell short.
    if let Some(best) = points
        .iter()
        .filter(|p| p.converged)
        .max_by(|a, b| a.g.total_cmp(&b.g))
    {
        if best.g > sew.g {
            let warm: Vec<Vec<f64>> = locals.iter().map(|l| l.params.clone()).collect();
            let (b, l) = sew_local(test, layout, Direction::Sup, &warm, boosted, settings)?;
            sew_opt = l;
            sew_ok = sew_ok || b.converged;
            sew = SewPoint {
                c: m.expectation(constraint.matrix(), &sew_opt.params),
                g: b.value,
            };
        }
    }
    let mut curve = SeparabilityCurve::from_points(points, Some(sew), fp, settings.clone())?;
    curve.reliable = curve.reliable && sew_ok;
    Ok(curve)
}

/// `(g_c, g_c̃)`: the hull maximum over `[c_min, c]` and over `[c, c_max]`.
pub fn branch_bounds(curve: &SeparabilityCurve, c: f64) -> Result<(f64, f64)> {
    let (lo, hi) = curve.range();
    Ok((curve.max_over(lo, c)?, curve.max_over(c, hi)?))
}

/// Which side of the SEW optimum's constraint value the detection used.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    /// Whole `c` interval below `c*`: the bound is `g_c`.
    #[serde(rename = "below-c")]
    BelowC,
    /// Whole `c` interval above `c*`: the bound is `g_c̃`.
    #[serde(rename = "above-c")]
    AboveC,
    /// The interval contains `c*`.
    #[serde(rename = "equality-curve")]
    EqualityCurve,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub entangled: bool,
    /// `(l̂ − k σ_l) − max g` over the `c` interval; absent when inconclusive.
    pub margin: Option<f64>,
    pub sigma_level: f64,
    pub bound: Option<f64>,
    pub c_interval: (f64, f64),
    pub branch: Option<Branch>,
    pub inconclusive: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Entangled iff `l̂ − kσ_l` strictly exceeds the curve's maximum over
/// `[ĉ − kσ_c, ĉ + kσ_c]`.
pub fn detect(
    curve: &SeparabilityCurve,
    c_hat: f64,
    l_hat: f64,
    sigma_c: f64,
    sigma_l: f64,
    k: f64,
) -> Result<Verdict> {
    for (name, v) in [
        ("c_hat", c_hat),
        ("l_hat", l_hat),
        ("sigma_c", sigma_c),
        ("sigma_l", sigma_l),
        ("k", k),
    ] {
        if !v.is_finite() {
            return Err(Error::InvalidParameter(format!("{name} must be finite")));
        }
    }
    if k < 0.0 || sigma_c < 0.0 || sigma_l < 0.0 {
        return Err(Error::InvalidParameter(
            "k and the standard errors must be non-negative".into(),
        ));
    }
    if !curve.is_reliable() {
        return Err(Error::Unconverged(
            "separability curve is marked unreliable".into(),
        ));
    }
    let (lo, hi) = curve.range();
    let (a, b) = (c_hat - k * sigma_c, c_hat + k * sigma_c);
    let (ca, cb) = (a.max(lo), b.min(hi));
    if ca > cb + RANGE_TOL {
        return Ok(Verdict {
            entangled: false,
            margin: None,
            sigma_level: k,
            bound: None,
            c_interval: (a, b),
            branch: None,
            inconclusive: true,
            note: Some(format!(
                "c interval [{}, {}] lies outside the curve range [{}, {}]; \
                 no separable bound applies there",
                fmt_sig(a),
                fmt_sig(b),
                fmt_sig(lo),
                fmt_sig(hi)
            )),
        });
    }
    let cb = cb.max(ca);
    let bound = curve.upper_max_over(ca, cb);
    let margin = l_hat - k * sigma_l - bound;
    let entangled = margin > 0.0;
    let c_star = curve.peak().c;
    let side = if cb < c_star {
        Branch::BelowC
    } else if ca > c_star {
        Branch::AboveC
    } else {
        Branch::EqualityCurve
    };
    let branch = entangled.then_some(side);
    let note = (a < lo || b > hi)
        .then(|| format!("c interval clipped to [{}, {}]", fmt_sig(ca), fmt_sig(cb)));
    Ok(Verdict {
        entangled,
        margin: Some(margin),
        sigma_level: k,
        bound: Some(bound),
        c_interval: (ca, cb),
        branch,
        inconclusive: false,
        note,
    })
}
