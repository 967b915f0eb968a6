//! Aggregation of node observations into per-domain acceptance statistics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TokenId;

/// One observed tree node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub domain: String,
    pub prompt_id: usize,
    /// Zero-based index of the generation step within the output.
    pub step_index: usize,
    pub depth: usize,
    /// 0 for the first half of the generation budget, 1 for the second.
    pub position_bin: u8,
    pub token: TokenId,
    pub p_draft: f64,
    pub p_target: f64,
    pub alpha: f64,
    pub target_entropy: f64,
}

/// Bin 0 holds steps `0..max_new_tokens / 2`, bin 1 the rest.
pub fn position_bin(step_index: usize, max_new_tokens: usize) -> u8 {
    u8::from(2 * step_index >= max_new_tokens)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSummary {
    pub node_count: usize,
    pub mean_alpha: f64,
    /// Population standard deviation.
    pub std_alpha: f64,
    pub mean_entropy: f64,
    pub per_depth_alpha: BTreeMap<usize, f64>,
    pub chain_prob: BTreeMap<usize, f64>,
    pub expected_len: f64,
    /// Spearman correlation of entropy with alpha; `None` when either is
    /// constant across the domain.
    pub spearman_rho: Option<f64>,
}

#[derive(Debug, Default, Clone, Copy)]
struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn population_std(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.m2 / self.n as f64).max(0.0).sqrt()
        }
    }
}

fn summarize_group(records: &[&NodeRecord]) -> Result<DomainSummary> {
    let mut alpha = Moments::default();
    let mut entropy = Moments::default();
    let mut by_depth: BTreeMap<usize, Moments> = BTreeMap::new();
    for r in records {
        alpha.push(r.alpha);
        entropy.push(r.target_entropy);
        by_depth.entry(r.depth).or_default().push(r.alpha);
    }
    let per_depth_alpha: BTreeMap<usize, f64> =
        by_depth.into_iter().map(|(d, m)| (d, m.mean)).collect();
    let chain_prob = chain_probabilities(&per_depth_alpha)?;
    let expected_len = chain_prob.values().sum();
    let pairs: Vec<(f64, f64)> = records
        .iter()
        .map(|r| (r.target_entropy, r.alpha))
        .collect();
    Ok(DomainSummary {
        node_count: records.len(),
        mean_alpha: alpha.mean,
        std_alpha: alpha.population_std(),
        mean_entropy: entropy.mean,
        per_depth_alpha,
        chain_prob,
        expected_len,
        spearman_rho: spearman_rho(&pairs).ok(),
    })
}

/// Per-domain summaries. Empty input gives an empty map.
pub fn summarize(records: &[NodeRecord]) -> Result<BTreeMap<String, DomainSummary>> {
    let mut groups: BTreeMap<&str, Vec<&NodeRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(&r.domain).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(d, rs)| Ok((d.to_string(), summarize_group(&rs)?)))
        .collect()
}

/// Summary pooled over every record regardless of domain.
pub fn summarize_pooled(records: &[NodeRecord]) -> Result<Option<DomainSummary>> {
    if records.is_empty() {
        return Ok(None);
    }
    let all: Vec<&NodeRecord> = records.iter().collect();
    summarize_group(&all).map(Some)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthProfile {
    /// Mean alpha per (domain, depth).
    pub cells: BTreeMap<(String, usize), f64>,
    /// Per domain: mean alpha at the deepest observed depth minus depth 1.
    pub delta: BTreeMap<String, f64>,
}

pub fn depth_profile(records: &[NodeRecord]) -> DepthProfile {
    let mut acc: BTreeMap<(String, usize), Moments> = BTreeMap::new();
    for r in records {
        acc.entry((r.domain.clone(), r.depth))
            .or_default()
            .push(r.alpha);
    }
    let cells: BTreeMap<(String, usize), f64> =
        acc.into_iter().map(|(k, m)| (k, m.mean)).collect();
    let mut delta = BTreeMap::new();
    for ((domain, depth), mean) in &cells {
        if *depth == 1 {
            continue;
        }
        if let Some(first) = cells.get(&(domain.clone(), 1)) {
            // cells are ordered by depth, so the last write is the deepest
            delta.insert(domain.clone(), mean - first);
        }
    }
    DepthProfile { cells, delta }
}

/// Cumulative products `d -> ᾱ_1 ⋯ ᾱ_d` over a contiguous depth range `1..=D`.
pub fn chain_probabilities(per_depth_alpha: &BTreeMap<usize, f64>) -> Result<BTreeMap<usize, f64>> {
    let max = per_depth_alpha.keys().next_back().copied().unwrap_or(0);
    if max == 0 || per_depth_alpha.contains_key(&0) {
        return Err(Error::MissingDepth(1));
    }
    let mut out = BTreeMap::new();
    let mut prod = 1.0;
    for d in 1..=max {
        let a = per_depth_alpha.get(&d).ok_or(Error::MissingDepth(d))?;
        prod *= a;
        out.insert(d, prod);
    }
    Ok(out)
}

/// `Σ_d ∏_{k≤d} ᾱ_k`.
pub fn expected_accepted_length(per_depth_alpha: &BTreeMap<usize, f64>) -> Result<f64> {
    Ok(chain_probabilities(per_depth_alpha)?.values().sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionEffects {
    /// Mean alpha per (depth, position bin), pooled over domains.
    pub cells: BTreeMap<(usize, u8), f64>,
    /// Per depth: late-bin mean minus early-bin mean.
    pub delta: BTreeMap<usize, f64>,
}

pub fn position_effects(records: &[NodeRecord]) -> PositionEffects {
    let mut acc: BTreeMap<(usize, u8), Moments> = BTreeMap::new();
    for r in records {
        acc.entry((r.depth, r.position_bin)).or_default().push(r.alpha);
    }
    let cells: BTreeMap<(usize, u8), f64> = acc.into_iter().map(|(k, m)| (k, m.mean)).collect();
    let delta = cells
        .iter()
        .filter(|((_, bin), _)| *bin == 0)
        .filter_map(|((depth, _), early)| {
            cells.get(&(*depth, 1)).map(|late| (*depth, late - early))
        })
        .collect();
    PositionEffects { cells, delta }
}

/// 1-based ranks with ties replaced by the average rank of their group.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman ρ: Pearson correlation of average-assigned ranks.
pub fn spearman_rho(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two observations"));
    }
    let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    pearson(&average_ranks(&x), &average_ranks(&y))
        .ok_or(Error::UndefinedCorrelation("a variable is constant"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(domain: &str, depth: usize, bin: u8, alpha: f64) -> NodeRecord {
        NodeRecord {
            domain: domain.into(),
            prompt_id: 0,
            step_index: 0,
            depth,
            position_bin: bin,
            token: TokenId(0),
            p_draft: 1.0,
            p_target: alpha,
            alpha,
            target_entropy: 0.5,
        }
    }

    fn depths(v: &[f64]) -> BTreeMap<usize, f64> {
        v.iter().enumerate().map(|(i, a)| (i + 1, *a)).collect()
    }

    #[test]
    fn two_record_summary() {
        let s = summarize(&[rec("chat", 1, 0, 0.0), rec("chat", 1, 0, 1.0)]).unwrap();
        let chat = &s["chat"];
        assert_eq!(chat.node_count, 2);
        assert_eq!(chat.mean_alpha, 0.5);
        assert_eq!(chat.std_alpha, 0.5);
        assert_eq!(chat.expected_len, 0.5);
        assert!(summarize(&[]).unwrap().is_empty());
    }

    #[test]
    fn chain_and_length_examples() {
        let c = chain_probabilities(&depths(&[0.5, 0.5, 0.5])).unwrap();
        assert_eq!(c.values().copied().collect::<Vec<_>>(), vec![0.5, 0.25, 0.125]);
        let ones = chain_probabilities(&depths(&[1.0; 3])).unwrap();
        assert!(ones.values().all(|p| *p == 1.0));
        assert_eq!(expected_accepted_length(&depths(&[0.0; 3])).unwrap(), 0.0);
        let mut gap = depths(&[0.5, 0.5]);
        gap.insert(4, 0.5);
        assert!(matches!(chain_probabilities(&gap), Err(Error::MissingDepth(3))));
        assert!(chain_probabilities(&BTreeMap::new()).is_err());
    }

    #[test]
    fn depth_profile_single_cell() {
        let p = depth_profile(&[rec("m", 1, 0, 0.2), rec("m", 1, 1, 0.4)]);
        assert_eq!(p.cells.len(), 1);
        assert!((p.cells[&("m".to_string(), 1)] - 0.3).abs() < 1e-15);
        assert!(p.delta.is_empty());
    }

    #[test]
    fn depth_delta() {
        let rs = vec![rec("c", 1, 0, 0.5), rec("c", 2, 0, 0.1), rec("c", 3, 0, 0.75)];
        assert_eq!(depth_profile(&rs).delta["c"], 0.25);
    }

    #[test]
    fn flat_position_effects() {
        let rs: Vec<NodeRecord> = (1..=3)
            .flat_map(|d| [rec("a", d, 0, 0.4), rec("b", d, 1, 0.4)])
            .collect();
        let e = position_effects(&rs);
        assert_eq!(e.cells.len(), 6);
        assert!(e.delta.values().all(|d| *d == 0.0));
    }

    #[test]
    fn position_bin_boundary() {
        assert_eq!(position_bin(31, 64), 0);
        assert_eq!(position_bin(32, 64), 1);
        assert_eq!(position_bin(0, 1), 0);
    }

    #[test]
    fn spearman_examples() {
        let dec = [(1.0, 0.9), (2.0, 0.5), (3.0, 0.1)];
        assert_eq!(spearman_rho(&dec).unwrap(), -1.0);
        let same: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, i as f64)).collect();
        assert_eq!(spearman_rho(&same).unwrap(), 1.0);
        assert!(spearman_rho(&[(1.0, 2.0), (1.0, 3.0)]).is_err());
        assert!(spearman_rho(&[(1.0, 2.0)]).is_err());
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    proptest! {
        #[test]
        fn expected_length_is_sum_of_chain(a in prop::collection::vec(0.0f64..=1.0, 1..8)) {
            let m = depths(&a);
            let chain = chain_probabilities(&m).unwrap();
            let sum: f64 = chain.values().sum();
            prop_assert_eq!(expected_accepted_length(&m).unwrap(), sum);
            let vals: Vec<f64> = chain.values().copied().collect();
            prop_assert!(vals.windows(2).all(|w| w[1] <= w[0]));
            for (d, p) in &chain {
                let min = a[..*d].iter().copied().fold(1.0, f64::min);
                prop_assert!(*p <= min + 1e-15);
            }
        }

        #[test]
        fn spearman_monotone_invariance(
            xs in prop::collection::vec(-5i32..5, 3..60),
            ys in prop::collection::vec(-5i32..5, 3..60),
        ) {
            let n = xs.len().min(ys.len());
            let pairs: Vec<(f64, f64)> =
                (0..n).map(|i| (xs[i] as f64, ys[i] as f64)).collect();
            let Ok(rho) = spearman_rho(&pairs) else { return Ok(()); };
            prop_assert!((-1.0..=1.0).contains(&rho));
            let warped: Vec<(f64, f64)> =
                pairs.iter().map(|(x, y)| (x.exp(), 3.0 * y.powi(3) - 1.0)).collect();
            prop_assert!((spearman_rho(&warped).unwrap() - rho).abs() < 1e-12);
        }

        #[test]
        fn spearman_self_and_negation(xs in prop::collection::btree_set(-1000i32..1000, 2..50)) {
            let pairs: Vec<(f64, f64)> = xs.iter().map(|x| (*x as f64, *x as f64)).collect();
            prop_assert!((spearman_rho(&pairs).unwrap() - 1.0).abs() < 1e-12);
            let neg: Vec<(f64, f64)> = pairs.iter().map(|(x, _)| (*x, -x)).collect();
            prop_assert!((spearman_rho(&neg).unwrap() + 1.0).abs() < 1e-12);
        }

        #[test]
        fn summarize_is_order_invariant(
            alphas in prop::collection::vec((0.0f64..=1.0, 1usize..4), 1..80),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let rs: Vec<NodeRecord> = alphas.iter().enumerate()
                .map(|(i, (a, d))| rec(if i % 3 == 0 { "x" } else { "y" }, *d, 0, *a))
                .collect();
            let mut shuffled = rs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = summarize(&rs);
            let b = summarize(&shuffled);
            // missing depths make both fail the same way
            prop_assert_eq!(a.is_ok(), b.is_ok());
            if let (Ok(a), Ok(b)) = (a, b) {
                for (k, sa) in &a {
                    let sb = &b[k];
                    prop_assert_eq!(sa.node_count, sb.node_count);
                    prop_assert!((sa.mean_alpha - sb.mean_alpha).abs() < 1e-12);
                    prop_assert!((sa.std_alpha - sb.std_alpha).abs() < 1e-12);
                    prop_assert!((sa.expected_len - sb.expected_len).abs() < 1e-12);
                }
            }
        }
    }
}
