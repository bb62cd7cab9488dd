//! N agents sharing the three-outcome device: partition bounds at `c = 0`,
//! the states attaining them, and violation classification.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{Layout, OptimizerSettings};
use crate::povm::{build_three_outcome, product_operator, Povm, ThreeOutcomeParams};
use crate::qcore::{HermitianOperator, ProductState, PureState, C64};
use crate::witness::{constrained_bound, BoundResult, ConstraintSpec, TestOperator};

/// Dense operators on `2^N` amplitudes stay tractable up to here.
pub const MAX_AGENTS: usize = 12;
/// Block-wise optimization over partitions is offered up to this many agents.
pub const MAX_NUMERIC_AGENTS: usize = 6;

/// Disjoint blocks of 1-based agent labels covering `1..=N`, stored with
/// block sizes ascending so the largest block `M_k` comes last.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Partition {
    blocks: Vec<Vec<usize>>,
}

impl Partition {
    pub fn new(mut blocks: Vec<Vec<usize>>) -> Result<Self> {
        if blocks.is_empty() || blocks.iter().any(|b| b.is_empty()) {
            return Err(Error::Format("partition with an empty block".into()));
        }
        let mut all: Vec<usize> = blocks.iter().flatten().copied().collect();
        all.sort_unstable();
        let n = all.len();
        if all != (1..=n).collect::<Vec<_>>() {
            return Err(Error::Format(format!(
                "partition blocks must cover agents 1..={n} exactly once"
            )));
        }
        if n > MAX_AGENTS {
            return Err(Error::Capacity {
                requested: n,
                limit: MAX_AGENTS,
            });
        }
        blocks.iter_mut().for_each(|b| b.sort_unstable());
        blocks.sort_by_key(|b| b.len());
        Ok(Self { blocks })
    }

    /// Every agent alone.
    pub fn finest(n: usize) -> Result<Self> {
        Self::new((1..=n).map(|i| vec![i]).collect())
    }

    /// All agents in one block.
    pub fn trivial(n: usize) -> Result<Self> {
        Self::new(vec![(1..=n).collect()])
    }

    /// Every set partition of `1..=n`.
    pub fn all(n: usize) -> Result<Vec<Self>> {
        if n == 0 || n > MAX_NUMERIC_AGENTS {
            return Err(Error::Capacity {
                requested: n,
                limit: MAX_NUMERIC_AGENTS,
            });
        }
        let mut out = Vec::new();
        let mut current: Vec<Vec<usize>> = Vec::new();
        fn rec(i: usize, n: usize, cur: &mut Vec<Vec<usize>>, out: &mut Vec<Vec<Vec<usize>>>) {
            if i > n {
                out.push(cur.clone());
                return;
            }
            for b in 0..cur.len() {
                cur[b].push(i);
                rec(i + 1, n, cur, out);
                cur[b].pop();
            }
            cur.push(vec![i]);
            rec(i + 1, n, cur, out);
            cur.pop();
        }
        rec(1, n, &mut current, &mut out);
        out.into_iter().map(Self::new).collect()
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn n_agents(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(Vec::len).collect()
    }

    /// `M_k`.
    pub fn largest(&self) -> usize {
        self.blocks.last().map_or(0, Vec::len)
    }
}

impl FromStr for Partition {
    type Err = Error;

    /// `"1,2|3|4"`: comma-separated agents within a block, pipes between blocks.
    fn from_str(s: &str) -> Result<Self> {
        let blocks = s
            .split('|')
            .map(|b| {
                b.split(',')
                    .map(|a| {
                        a.trim()
                            .parse::<usize>()
                            .map_err(|_| Error::Format(format!("bad agent label {a:?} in {s:?}")))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(blocks)
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: Vec<String> = self
            .blocks
            .iter()
            .map(|b| {
                b.iter()
                    .map(|a| a.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect();
        f.write_str(&s.join("|"))
    }
}

impl Serialize for Partition {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Partition {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn check_agents(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 agents, got {n}"
        )));
    }
    if n > MAX_AGENTS {
        return Err(Error::Capacity {
            requested: n,
            limit: MAX_AGENTS,
        });
    }
    Ok(())
}

fn devices(params: &[ThreeOutcomeParams]) -> Result<Vec<Povm>> {
    params.iter().map(|&p| build_three_outcome(p)).collect()
}

/// `L̂ = ⊗ᵢ Π₂⁽ⁱ⁾`, `Ĉ = ⊗ᵢ Π₁⁽ⁱ⁾`, one device per agent.
pub fn multi_operators_with(
    params: &[ThreeOutcomeParams],
) -> Result<(TestOperator, HermitianOperator)> {
    check_agents(params.len())?;
    let povms = devices(params)?;
    let refs: Vec<&Povm> = povms.iter().collect();
    let factors = refs
        .iter()
        .map(|p| Ok(p.effect(2)?.operator().clone()))
        .collect::<Result<Vec<_>>>()?;
    let l = TestOperator::product(factors)?;
    let c = product_operator(&refs, &vec![1; refs.len()])?;
    Ok((l, c))
}

/// The same device for all `n` agents.
pub fn multi_operators(
    n: usize,
    params: ThreeOutcomeParams,
) -> Result<(TestOperator, HermitianOperator)> {
    check_agents(n)?;
    multi_operators_with(&vec![params; n])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiBound {
    pub x: f64,
    pub n: usize,
    pub m_k: usize,
    pub g: f64,
}

/// `g(x; N, M_k) = (1 − x/2)^N − (1 − x/2)^{N−M_k} ((1 − x)/2)^{M_k}`: the
/// separable bound at `c = 0` for any partition whose largest block has
/// `M_k` agents.
pub fn closed_form_bound(x: f64, n: usize, m_k: usize) -> Result<MultiBound> {
    ThreeOutcomeParams::new(x, 0.0)?;
    check_agents(n)?;
    if m_k == 0 || m_k > n {
        return Err(Error::InvalidParameter(format!(
            "M_k = {m_k} outside 1..={n}"
        )));
    }
    let a = 1.0 - x / 2.0;
    let b = (1.0 - x) / 2.0;
    let g = a.powi(n as i32) - a.powi((n - m_k) as i32) * b.powi(m_k as i32);
    Ok(MultiBound { x, n, m_k, g })
}

/// Block-product state; factor `i` lives on the agents of block `i`, so
/// the subsystem order is the partition's block order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockProductState {
    pub partition: Partition,
    pub state: ProductState,
}

impl BlockProductState {
    /// The state with subsystems in agent order `1..=N`.
    pub fn to_agent_order(&self) -> Result<PureState> {
        let order: Vec<usize> = self
            .partition
            .blocks()
            .iter()
            .flatten()
            .map(|a| a - 1)
            .collect();
        let mut inverse = vec![0; order.len()];
        for (pos, &agent) in order.iter().enumerate() {
            inverse[agent] = pos;
        }
        self.state.to_pure().permute_subsystems(&inverse)
    }
}

fn kron_power(v: &DVector<C64>, m: usize) -> DVector<C64> {
    let mut out = v.clone();
    for _ in 1..m {
        out = out.kronecker(v);
    }
    out
}

/// Optimal separable state at `c = 0`: `⊗|χ⁺⟩` on every block but the
/// largest, which carries `⊗|χ⁺⟩` minus its component along `⊗|V⟩`, all
/// normalized.
pub fn optimal_separable_multi(
    params: ThreeOutcomeParams,
    partition: &Partition,
) -> Result<BlockProductState> {
    params.validate()?;
    check_agents(partition.n_agents())?;
    let chi = params.chi_plus();
    let last = partition.blocks().len() - 1;
    let factors = partition
        .blocks()
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let m = b.len();
            let mut v = kron_power(&chi, m);
            if i == last {
                // ⊗|V⟩ is the last basis vector.
                let k = v.len() - 1;
                v[k] = C64::new(0.0, 0.0);
            }
            PureState::normalized(vec![2; m], v)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BlockProductState {
        partition: partition.clone(),
        state: ProductState::new(factors)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    None,
    Partial,
    Genuine,
    SuperBoundAnomaly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub classification: Classification,
    pub l: f64,
    /// `g(N, 1)`, `g(N, N−1)`, `g(N, N)`.
    pub thresholds: [f64; 3],
    pub note: String,
}

/// Place a measured `⟨L̂⟩` (taken at `c = 0`) among the partition bounds.
pub fn classify(x: f64, n: usize, l: f64, c_confirmed_zero: bool) -> Result<ClassificationReport> {
    if !c_confirmed_zero {
        return Err(Error::Domain(
            "classification thresholds hold only at c = 0; confirm the constraint value is zero"
                .into(),
        ));
    }
    if !l.is_finite() {
        return Err(Error::NonFinite("measured test value"));
    }
    let g1 = closed_form_bound(x, n, 1)?.g;
    let gn1 = closed_form_bound(x, n, n - 1)?.g;
    let gn = closed_form_bound(x, n, n)?.g;
    let (classification, note) = if l <= g1 {
        (Classification::None, "no partition bound is violated")
    } else if l <= gn1 {
        (
            Classification::Partial,
            "entangled across at least one partition, not all",
        )
    } else if l <= gn {
        (
            Classification::Genuine,
            "entangled across every bipartition",
        )
    } else {
        (
            Classification::SuperBoundAnomaly,
            "exceeds the bound no quantum state can violate; check data and model",
        )
    };
    Ok(ClassificationReport {
        classification,
        l,
        thresholds: [g1, gn1, gn],
        note: note.into(),
    })
}

/// `sup ⟨L̂⟩` over block-wise pure states of `partition` with `⟨Ĉ⟩ = c`,
/// one device per agent (agent order).
pub fn numeric_partition_bound_with(
    params: &[ThreeOutcomeParams],
    partition: &Partition,
    c: f64,
    settings: &OptimizerSettings,
) -> Result<BoundResult> {
    let n = partition.n_agents();
    if params.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} devices for {n} agents",
            params.len()
        )));
    }
    if n > MAX_NUMERIC_AGENTS {
        return Err(Error::Capacity {
            requested: n,
            limit: MAX_NUMERIC_AGENTS,
        });
    }
    // Reorder agents so each block is contiguous.
    let order: Vec<usize> = partition.blocks().iter().flatten().map(|a| a - 1).collect();
    let reordered: Vec<ThreeOutcomeParams> = order.iter().map(|&i| params[i]).collect();
    let (l, cop) = multi_operators_with(&reordered)?;
    let layout = Layout::new(
        partition
            .blocks()
            .iter()
            .map(|b| vec![2; b.len()])
            .collect(),
    )?;
    constrained_bound(&l, &ConstraintSpec { op: cop, value: c }, &layout, settings)
}

pub fn numeric_partition_bound(
    params: ThreeOutcomeParams,
    partition: &Partition,
    c: f64,
    settings: &OptimizerSettings,
) -> Result<BoundResult> {
    numeric_partition_bound_with(&vec![params; partition.n_agents()], partition, c, settings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::expectation;

    const X: f64 = 2.0 / 3.0;

    fn p0() -> ThreeOutcomeParams {
        ThreeOutcomeParams::new(X, 0.0).unwrap()
    }

    #[test]
    fn partition_parsing() {
        let p: Partition = "3,1|2".parse().unwrap();
        assert_eq!(p.blocks(), &[vec![2], vec![1, 3]]);
        assert_eq!(p.to_string(), "2|1,3");
        assert_eq!(p.largest(), 2);
        assert!("1,2|2".parse::<Partition>().is_err());
        assert!("1,3".parse::<Partition>().is_err());
        assert!("1,,2".parse::<Partition>().is_err());
        assert_eq!(Partition::all(3).unwrap().len(), 5);
        assert_eq!(Partition::all(4).unwrap().len(), 15);
    }

    #[test]
    fn closed_form_values() {
        let g = |n, m| closed_form_bound(X, n, m).unwrap().g;
        for (n, m, v) in [
            (2, 1, 1.0 / 3.0),
            (2, 2, 5.0 / 12.0),
            (3, 1, 2.0 / 9.0),
            (3, 2, 5.0 / 18.0),
            (3, 3, 7.0 / 24.0),
        ] {
            assert!((g(n, m) - v).abs() < 1e-15, "g({n},{m})");
        }
        for n in 2..=6 {
            for m in 1..n {
                assert!(g(n, m + 1) > g(n, m));
            }
        }
        assert!(closed_form_bound(X, 3, 0).is_err());
        assert!(closed_form_bound(1.0, 3, 1).is_err());
    }

    #[test]
    fn operators_and_spectra() {
        let (l, c) = multi_operators(3, p0()).unwrap();
        assert!((c.max_eigenvalue() - 8.0 / 27.0).abs() < 1e-12);
        assert!((l.op().max_eigenvalue() - 8.0 / 27.0).abs() < 1e-12);
        assert!(multi_operators(13, p0()).is_err());
    }

    #[test]
    fn optimal_states_attain_the_closed_form() {
        for theta in [0.0, 1.1] {
            let params = ThreeOutcomeParams::new(X, theta).unwrap();
            for n in 2..=5 {
                let (l, c) = multi_operators(n, params).unwrap();
                for p in Partition::all(n).unwrap() {
                    let s = optimal_separable_multi(params, &p)
                        .unwrap()
                        .to_agent_order()
                        .unwrap();
                    let g = closed_form_bound(X, n, p.largest()).unwrap().g;
                    assert!(expectation(&c, &s).unwrap().abs() < 1e-12);
                    assert!((expectation(l.op(), &s).unwrap() - g).abs() < 1e-9, "{p}");
                }
            }
        }
    }

    #[test]
    fn classification_thresholds() {
        let k = |l| classify(X, 3, l, true).unwrap().classification;
        assert_eq!(k(0.2), Classification::None);
        assert_eq!(k(0.25), Classification::Partial);
        assert_eq!(k(0.29), Classification::Genuine);
        assert_eq!(k(0.5), Classification::SuperBoundAnomaly);
        assert!(matches!(classify(X, 3, 0.25, false), Err(Error::Domain(_))));
    }

    #[test]
    fn numeric_bound_matches_closed_form_for_three_agents() {
        let settings = OptimizerSettings {
            restarts: 16,
            ..Default::default()
        };
        for p in Partition::all(3).unwrap() {
            let b = numeric_partition_bound(p0(), &p, 0.0, &settings).unwrap();
            let g = closed_form_bound(X, 3, p.largest()).unwrap().g;
            assert!((b.value - g).abs() < 2e-3, "{p}: {} vs {g}", b.value);
        }
    }
}
