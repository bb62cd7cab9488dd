//! Acceptance checks, one PASS/FAIL line each.
//!
//! Runs as a plain binary (`harness = false`) so the report is always
//! printed. The process fails only for criteria not listed in
//! `KNOWN_UNATTAINABLE`; those are still evaluated and reported.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, Output};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::Rng;
use uew_core::multipartite::{
    closed_form_bound, multi_operators, numeric_partition_bound, optimal_separable_multi, Partition,
};
use uew_core::optim::{
    Direction, Layout, OptimizerSettings, PenalizedObjective, Penalty, ProductManifold,
};
use uew_core::povm::{build_three_outcome, ThreeOutcomeParams};
use uew_core::qcore::{expectation, DensityMatrix, HermitianOperator};
use uew_core::rng;
use uew_core::sampler::{
    brute_force_constrained_sup, ppt_oracle, random_density_matrix, sample_product_state_from,
    scatter, simulate_counts,
};
use uew_core::witness::{
    attainable_range, detect, entangled_max, entangled_pure_sup, numeric_entangled_sup,
    optimal_entangled_state, pair_operators, separability_curve, sew_bound,
    three_outcome_reference_bound, tighten, uniform_grid, zero_constraint_optimal_state,
    DecompositionTerm, MeasuredData, SeparabilityCurve, TestOperator, CHORD_TOL,
};

/// Criteria that cannot hold as stated; see the README.
const KNOWN_UNATTAINABLE: &[u32] = &[4];

const X: f64 = 2.0 / 3.0;

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn params(theta: f64) -> ThreeOutcomeParams {
    ThreeOutcomeParams::new(X, theta).unwrap()
}

fn settings() -> OptimizerSettings {
    OptimizerSettings::default()
}

struct Curve201 {
    curve: SeparabilityCurve,
    elapsed: Duration,
}

fn curve201() -> &'static Curve201 {
    static CURVE: OnceLock<Curve201> = OnceLock::new();
    CURVE.get_or_init(|| {
        let (l, c) = pair_operators(params(0.0)).unwrap();
        let grid = uniform_grid(0.0, X * X, 201).unwrap();
        let t = Instant::now();
        let curve =
            separability_curve(&l, &c, &grid, &Layout::parties(&[2, 2]), &settings()).unwrap();
        Curve201 {
            curve,
            elapsed: t.elapsed(),
        }
    })
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c1_sew_bound() -> Outcome {
    let (l, _) = pair_operators(params(0.0)).unwrap();
    let t = Instant::now();
    let b = sew_bound(&l, &Layout::parties(&[2, 2]), Direction::Sup, &settings())
        .map_err(|e| e.to_string())?;
    let dt = t.elapsed();
    let oracle = l.analytic_extremum(Direction::Sup).unwrap();
    let ok = (b.value - 4.0 / 9.0).abs() <= 1e-6
        && (oracle - 4.0 / 9.0).abs() <= 1e-12
        && dt.as_secs_f64() < 5.0;
    check(
        ok,
        format!(
            "g_s = {:.12}, eigenvalue-product oracle = {oracle:.12}, {dt:.2?}",
            b.value
        ),
    )
}

fn c2_curve_points() -> Outcome {
    let Curve201 { curve, elapsed } = curve201();
    let (l, c) = pair_operators(params(0.0)).unwrap();
    let mut ok = curve.is_reliable() && elapsed.as_secs_f64() < 120.0;
    let mut parts = vec![format!("201 points in {elapsed:.1?}")];
    for (cv, target, tol) in [
        (0.0, 1.0 / 3.0, 2e-3),
        (X * X, 1.0 / 36.0, 1e-4),
        (1.0 / 36.0, 4.0 / 9.0, 2e-3),
    ] {
        let g = curve.value(cv).map_err(|e| e.to_string())?;
        let semi = three_outcome_reference_bound(X, cv).unwrap();
        let brute = brute_force_constrained_sup(l.op(), &c, cv, 200).map_err(|e| e.to_string())?;
        ok &= (g - target).abs() <= tol
            && (semi - target).abs() <= tol
            && (brute - target).abs() <= tol;
        parts.push(format!(
            "g({cv:.4}) = {g:.9} (semi-analytic {semi:.9}, brute force {brute:.9})"
        ));
    }
    check(ok, parts.join("; "))
}

fn c3_concavity() -> Outcome {
    let curve = &curve201().curve;
    let viol = curve.chord_violations(CHORD_TOL);
    let max = curve
        .points()
        .iter()
        .map(|p| p.g)
        .fold(f64::NEG_INFINITY, f64::max);
    let gs = curve.sew().map(|s| s.g).unwrap_or(f64::NAN);
    check(
        viol.is_empty() && max <= gs + 1e-9,
        format!(
            "{} chord violations, max g = {max:.12}, g_s = {gs:.12}",
            viol.len()
        ),
    )
}

fn c4_entangled_max() -> Outcome {
    let closed0 = entangled_max(0.0).unwrap();
    let mut ok = closed0 == 0.6;
    let mut worst: f64 = 0.0;
    let mut worst_at = 0.0;
    let mut physical: f64 = 0.0;
    for cv in [0.0, 0.1, 0.2, 0.3, 4.0 / 9.0] {
        let num = numeric_entangled_sup(params(0.0), cv, &settings()).map_err(|e| e.to_string())?;
        let d = (num.value - entangled_max(cv).unwrap()).abs();
        if d > worst {
            worst = d;
            worst_at = cv;
        }
        physical = physical.max((num.value - entangled_pure_sup(X, cv).unwrap()).abs());
    }
    ok &= worst <= 1e-4;
    let mut theta_spread: f64 = 0.0;
    for cv in [0.0, 0.2, 4.0 / 9.0] {
        let vals: Vec<f64> = [0.0, std::f64::consts::FRAC_PI_2, std::f64::consts::PI]
            .iter()
            .map(|&th| {
                let (l, _) = pair_operators(params(th)).unwrap();
                expectation(l.op(), &optimal_entangled_state(params(th), cv).unwrap()).unwrap()
            })
            .collect();
        let (lo, hi) = vals
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            });
        theta_spread = theta_spread.max(hi - lo);
    }
    for cv in [0.0, 0.2] {
        let vals: Vec<f64> = [0.0, std::f64::consts::FRAC_PI_2, std::f64::consts::PI]
            .iter()
            .map(|&th| numeric_entangled_sup(params(th), cv, &settings()).map(|b| b.value))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let (lo, hi) = vals
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            });
        theta_spread = theta_spread.max(hi - lo);
    }
    ok &= theta_spread <= 1e-9;
    check(
        ok,
        format!(
            "closed form at 0 = {closed0}; numeric vs closed form max gap {worst:.3e} (at c = {worst_at:.4}); \
             numeric vs attained sup max gap {physical:.3e}; theta spread {theta_spread:.1e}; \
             lambda_max(L) = 4/9 < 3/5, so the closed form is not attainable"
        ),
    )
}

fn c5_detection_gap() -> Outcome {
    let curve = &curve201().curve;
    let g0 = curve.value(0.0).map_err(|e| e.to_string())?;
    let closed_margin = entangled_max(0.0).unwrap() - g0;
    let num0 = numeric_entangled_sup(params(0.0), 0.0, &settings()).map_err(|e| e.to_string())?;
    let physical_margin = num0.value - g0;
    let sew = curve.sew().ok_or("curve has no standard-bound point")?;
    let at_star =
        numeric_entangled_sup(params(0.0), sew.c, &settings()).map_err(|e| e.to_string())?;
    let ok = (closed_margin - 4.0 / 15.0).abs() <= 2e-3
        && at_star.value <= sew.g + 1e-6
        && physical_margin > 0.0;
    check(
        ok,
        format!(
            "closed-form margin {closed_margin:.9} (4/15 = {:.9}); attained margin {physical_margin:.9}; \
             entangled sup at c* = {:.9} vs g_s = {:.9}",
            4.0 / 15.0,
            at_star.value,
            sew.g
        ),
    )
}

fn c6_multipartite() -> Outcome {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    let mut cases = Vec::new();
    for n in 2..=3 {
        for p in Partition::all(n).unwrap() {
            cases.push(p);
        }
    }
    cases.push(Partition::finest(4).unwrap());
    cases.push("1|2,3,4".parse().unwrap());
    for p in &cases {
        let b =
            numeric_partition_bound(params(0.0), p, 0.0, &settings()).map_err(|e| e.to_string())?;
        let cf = closed_form_bound(X, p.n_agents(), p.largest()).unwrap().g;
        worst = worst.max((b.value - cf).abs());
    }
    let mut cert: f64 = 0.0;
    for n in 2..=5 {
        let (l, c) = multi_operators(n, params(0.3)).unwrap();
        for p in Partition::all(n).unwrap() {
            let s = optimal_separable_multi(params(0.3), &p)
                .unwrap()
                .to_agent_order()
                .unwrap();
            let cf = closed_form_bound(X, n, p.largest()).unwrap().g;
            cert = cert.max((expectation(l.op(), &s).unwrap() - cf).abs());
            cert = cert.max(expectation(&c, &s).unwrap().abs());
        }
    }
    let dt = t.elapsed();
    check(
        worst <= 2e-3 && cert <= 1e-9 && dt.as_secs_f64() < 300.0,
        format!(
            "{} partitions, numeric vs closed form max gap {worst:.2e}; optimal-state certificate max gap {cert:.2e} (N <= 5); {dt:.1?}",
            cases.len()
        ),
    )
}

fn uew(args: &[&str], threads: Option<usize>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_uew"));
    cmd.args(args);
    if let Some(n) = threads {
        cmd.env("RAYON_NUM_THREADS", n.to_string());
    }
    cmd.output().expect("running uew")
}

fn certify_state(dir: &Path, state: &str) -> Result<(bool, f64, Duration), String> {
    let counts = dir.join(format!("{state}.json"));
    let t = Instant::now();
    let sim = uew(
        &[
            "simulate",
            "--state",
            state,
            "--c",
            "0",
            "--shots",
            "1e6",
            "--seed",
            "11",
            "--out",
            counts.to_str().unwrap(),
        ],
        None,
    );
    if !sim.status.success() {
        return Err(String::from_utf8_lossy(&sim.stderr).into_owned());
    }
    let out = uew(
        &[
            "certify",
            "--counts",
            counts.to_str().unwrap(),
            "--sigma",
            "3",
        ],
        None,
    );
    let dt = t.elapsed();
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    let entangled = v["verdict"]["entangled"].as_bool().ok_or("no verdict")?;
    let margin = v["verdict"]["margin"].as_f64().unwrap_or(f64::NAN);
    Ok((entangled, margin, dt))
}

fn c7_certification() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (e1, m1, t1) = certify_state(dir.path(), "optimal-entangled")?;
    let (e2, m2, t2) = certify_state(dir.path(), "maximally-mixed")?;
    check(
        e1 && !e2 && t1.as_secs_f64() < 30.0 && t2.as_secs_f64() < 30.0,
        format!("entangled state: {e1} (margin {m1:.6}, {t1:.1?}); maximally mixed: {e2} (margin {m2:.6}, {t2:.1?})"),
    )
}

fn c8_soundness() -> Outcome {
    let curve = &curve201().curve;
    let (l, c) = pair_operators(params(0.0)).unwrap();
    let mut pts = scatter(l.op(), &c, 5000, 101).map_err(|e| e.to_string())?;
    let mut r = rng::stream(101, 1 << 20);
    while pts.len() < 10_000 {
        let k = r.random_range(2..=4);
        let w: Vec<f64> = (0..k).map(|_| r.random::<f64>()).collect();
        let total: f64 = w.iter().sum();
        let (mut cm, mut lm) = (0.0, 0.0);
        for wi in &w {
            let s = sample_product_state_from(&[2, 2], &mut r).unwrap();
            cm += wi / total * expectation(&c, &s).unwrap();
            lm += wi / total * expectation(l.op(), &s).unwrap();
        }
        pts.push((cm, lm));
    }
    let mut false_pos = 0;
    for &(cv, lv) in &pts {
        if detect(curve, cv, lv, 0.0, 0.0, 0.0)
            .map_err(|e| e.to_string())?
            .entangled
        {
            false_pos += 1;
        }
    }
    let mut states: Vec<DensityMatrix> = Vec::new();
    for _ in 0..2000 {
        states.push(random_density_matrix(&[2, 2], &mut r).unwrap());
    }
    let mixed = DensityMatrix::maximally_mixed(&[2, 2]).unwrap();
    for i in 0..=20 {
        let cv = X * X * i as f64 / 20.0;
        let pure = optimal_entangled_state(params(0.0), cv)
            .unwrap()
            .to_density();
        for j in 0..10 {
            let p = j as f64 / 10.0;
            states.push(DensityMatrix::mixture(&[(1.0 - p, &pure), (p, &mixed)]).unwrap());
        }
    }
    let (mut certified, mut ppt_certified) = (0, 0);
    for s in &states {
        let (cv, lv) = (expectation(&c, s).unwrap(), expectation(l.op(), s).unwrap());
        if detect(curve, cv, lv, 0.0, 0.0, 0.0)
            .map_err(|e| e.to_string())?
            .entangled
        {
            certified += 1;
            if ppt_oracle(s).unwrap() {
                ppt_certified += 1;
            }
        }
    }
    check(
        false_pos == 0 && ppt_certified == 0 && certified > 0,
        format!(
            "{} separable points, {false_pos} flagged; {certified}/{} test states certified, {ppt_certified} of them PPT",
            pts.len(),
            states.len()
        ),
    )
}

fn c9_commuting() -> Outcome {
    let mut r = rng::stream(9, 0);
    let mut worst = f64::NEG_INFINITY;
    let mut s = settings();
    s.restarts = 16;
    for _ in 0..5 {
        let dl: Vec<f64> = (0..4).map(|_| r.random::<f64>()).collect();
        let dc: Vec<f64> = (0..4).map(|_| r.random::<f64>()).collect();
        let l = TestOperator::new(HermitianOperator::diagonal(&[2, 2], &dl).unwrap());
        let c = HermitianOperator::diagonal(&[2, 2], &dc).unwrap();
        let layout = Layout::parties(&[2, 2]);
        let range = attainable_range(&c, &layout, &s).map_err(|e| e.to_string())?;
        let grid = uniform_grid(range.min, range.max, 41).unwrap();
        let curve = separability_curve(&l, &c, &grid, &layout, &s).map_err(|e| e.to_string())?;
        for _ in 0..200 {
            let rho = random_density_matrix(&[2, 2], &mut r).unwrap();
            let cv = expectation(&c, &rho).unwrap().clamp(range.min, range.max);
            let lv = expectation(l.op(), &rho).unwrap();
            worst = worst.max(lv - curve.upper_value(cv).map_err(|e| e.to_string())?);
        }
    }
    check(
        worst <= 1e-6,
        format!("1000 states over 5 operator pairs, max excess over curve {worst:.3e}"),
    )
}

fn c10_tighten() -> Outcome {
    let povm = build_three_outcome(params(0.0)).unwrap();
    let refs = [&povm, &povm];
    let terms = [DecompositionTerm {
        beta: 1.0,
        outcomes: vec![2, 2],
    }];
    let rho = zero_constraint_optimal_state(params(0.0))
        .unwrap()
        .to_density();
    let counts = simulate_counts(&rho, &refs, 1_000_000, 5).unwrap();
    let t = tighten(
        &refs,
        &terms,
        &MeasuredData::Counts(counts),
        &[1, 1],
        &settings(),
    )
    .map_err(|e| e.to_string())?;
    let mut r = rng::stream(10, 0);
    let mut worst = f64::INFINITY;
    let mut s = settings();
    s.restarts = 16;
    for i in 0..100 {
        let p = ThreeOutcomeParams::new(
            r.random_range(0.2..0.9),
            r.random_range(0.0..std::f64::consts::TAU),
        )
        .unwrap();
        let d = build_three_outcome(p).unwrap();
        let rho = random_density_matrix(&[2, 2], &mut r).unwrap();
        let counts = simulate_counts(&rho, &[&d, &d], 10_000, i).unwrap();
        s.seed = i;
        let res = tighten(
            &[&d, &d],
            &terms,
            &MeasuredData::Counts(counts),
            &[1, 1],
            &s,
        )
        .map_err(|e| e.to_string())?;
        worst = worst.min(res.improvement);
    }
    check(
        (t.improvement - 1.0 / 9.0).abs() <= 2e-3 && worst >= -1e-9,
        format!(
            "improvement at c = {} is {:.9} (1/9 = {:.9}); min over 100 random runs {worst:.3e}",
            t.c,
            t.improvement,
            1.0 / 9.0
        ),
    )
}

fn c11_gradients() -> Outcome {
    let (l, c) = pair_operators(params(0.7)).unwrap();
    let (l3, c3) = multi_operators(3, params(0.7)).unwrap();
    let layouts = [
        (
            Layout::parties(&[2, 2]),
            l.op().matrix().clone(),
            c.matrix().clone(),
        ),
        (
            Layout::global(&[2, 2]),
            l.op().matrix().clone(),
            c.matrix().clone(),
        ),
        (
            Layout::parties(&[2, 2, 2]),
            l3.op().matrix().clone(),
            c3.matrix().clone(),
        ),
        (
            Layout::new(vec![vec![2], vec![2, 2]]).unwrap(),
            l3.op().matrix().clone(),
            c3.matrix().clone(),
        ),
    ];
    let penalties = [
        Penalty::None,
        Penalty::Quadratic {
            target: 0.1,
            mu: 10.0,
        },
        Penalty::Quadratic {
            target: 0.05,
            mu: 1e4,
        },
        Penalty::AtMinimum {
            target: 0.0,
            mu: 100.0,
        },
    ];
    let mut r = rng::stream(11, 0);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let (layout, lm, cm) = &layouts[i % layouts.len()];
        let m = ProductManifold::new(layout);
        let dir = if i % 2 == 0 {
            Direction::Sup
        } else {
            Direction::Inf
        };
        let obj =
            PenalizedObjective::new(&m, lm, Some(cm), dir, penalties[(i / 4) % penalties.len()]);
        let p = m.random_point(&mut r);
        let g = obj.gradient(&p);
        let h = 1e-6;
        let fd: Vec<f64> = (0..p.len())
            .map(|k| {
                let (mut a, mut b) = (p.clone(), p.clone());
                a[k] += h;
                b[k] -= h;
                (obj.value(&a) - obj.value(&b)) / (2.0 * h)
            })
            .collect();
        let num: f64 = g
            .iter()
            .zip(&fd)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let den: f64 = g.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-3);
        worst = worst.max(num / den);
    }
    check(
        worst <= 1e-5,
        format!("max relative gradient error {worst:.3e} over 100 points"),
    )
}

fn c12_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let runs: [&[&str]; 4] = [
        &["curve", "--grid", "21", "--seed", "3"],
        &["sample", "--n", "5000", "--seed", "3"],
        &["bound", "--c", "0.1", "--seed", "3"],
        &["multiparty", "--n", "3", "--partition", "1|2,3"],
    ];
    let mut identical = 0;
    let mut total = 0;
    for args in runs {
        let outs: Vec<Vec<u8>> = [Some(1), Some(1), Some(4)]
            .iter()
            .map(|&t| uew(args, t).stdout)
            .collect();
        total += 1;
        if !outs[0].is_empty() && outs.iter().all(|o| o == &outs[0]) {
            identical += 1;
        }
    }
    let files: Vec<Vec<u8>> = (0..2)
        .map(|i| {
            let p = dir.path().join(format!("bell{i}.json"));
            let t = if i == 0 { 1 } else { 4 };
            uew(
                &[
                    "simulate",
                    "--state",
                    "bell",
                    "--shots",
                    "1e6",
                    "--seed",
                    "7",
                    "--out",
                    p.to_str().unwrap(),
                ],
                Some(t),
            );
            std::fs::read(p).unwrap_or_default()
        })
        .collect();
    total += 1;
    if !files[0].is_empty() && files[0] == files[1] {
        identical += 1;
    }
    let (l, c) = pair_operators(params(0.0)).unwrap();
    let grid = uniform_grid(0.0, X * X, 31).unwrap();
    let lib: Vec<String> = [1, 4]
        .iter()
        .map(|&n| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .unwrap()
                .install(|| {
                    separability_curve(&l, &c, &grid, &Layout::parties(&[2, 2]), &settings())
                        .unwrap()
                        .to_csv()
                })
        })
        .collect();
    total += 1;
    if lib[0] == lib[1] {
        identical += 1;
    }
    check(
        identical == total,
        format!("{identical}/{total} outputs byte-identical across runs and 1/4 threads"),
    )
}

fn main() {
    let criteria: [Criterion; 12] = [
        (1, "standard bound", c1_sew_bound),
        (2, "curve endpoints and peak", c2_curve_points),
        (3, "concavity and never-worse", c3_concavity),
        (4, "entangled maximum", c4_entangled_max),
        (5, "detection gap", c5_detection_gap),
        (6, "multipartite bounds", c6_multipartite),
        (7, "certification round-trip", c7_certification),
        (8, "soundness", c8_soundness),
        (9, "commuting operators", c9_commuting),
        (10, "tightening", c10_tighten),
        (11, "optimizer gradients", c11_gradients),
        (12, "determinism", c12_determinism),
    ];
    let filter: Option<u32> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .and_then(|v| v.parse().ok());
    let mut unexpected = Vec::new();
    for (id, name, f) in criteria {
        if filter.is_some_and(|only| only != id) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let dt = t.elapsed();
        match outcome {
            Ok(detail) => println!("PASS {id:>2} {name}: {detail} [{dt:.1?}]"),
            Err(detail) => {
                let tag = if KNOWN_UNATTAINABLE.contains(&id) {
                    " (known unattainable)"
                } else {
                    ""
                };
                println!("FAIL {id:>2} {name}{tag}: {detail} [{dt:.1?}]");
                if !KNOWN_UNATTAINABLE.contains(&id) {
                    unexpected.push(id);
                }
            }
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
