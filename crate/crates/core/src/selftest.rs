//! Quick randomized cross-checks of the engine against [`crate::oracle`].

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::metrics::{average_ranks, expected_accepted_length, spearman_rho, summarize, NodeRecord};
use crate::model::{NGramModel, ProbDist, TokenId, Vocabulary};
use crate::oracle::{
    ancestor_mask, best_first_selection, enumerate_paths, naive_average_ranks, naive_spearman,
    sequential_scores, two_pass_mean_std,
};
use crate::tree::{build_draft_tree, tree_attention_mask, NodeId, TreeParams};
use crate::verify::{acceptance_prob, residual_distribution, score_tree, simulate_chain_acceptance, NodeScore};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub cases: usize,
    /// `None` on success, otherwise the first disagreement found.
    pub failure: Option<String>,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

type Check = fn(&mut ChaCha8Rng) -> Result<usize, String>;

const CHECKS: [(&str, Check); 6] = [
    ("tree construction vs enumeration", tree_check),
    ("batched scoring vs sequential", scoring_check),
    ("acceptance preserves the target", preservation_check),
    ("average ranks and spearman", spearman_check),
    ("streaming moments vs two-pass", moments_check),
    ("chain-length law", chain_check),
];

/// Runs every check with generators derived from `seed`.
pub fn run_all(seed: u64) -> Vec<CheckResult> {
    CHECKS
        .iter()
        .enumerate()
        .map(|(i, (name, check))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            match check(&mut rng) {
                Ok(cases) => CheckResult { name, cases, failure: None },
                Err(msg) => CheckResult { name, cases: 0, failure: Some(msg) },
            }
        })
        .collect()
}

fn random_model(rng: &mut ChaCha8Rng, size: usize, order: usize) -> NGramModel {
    let vocab = Arc::new(Vocabulary::new((0..size).map(|i| format!("t{i}"))).expect("distinct names"));
    let seqs: Vec<Vec<TokenId>> = (0..rng.random_range(1..4))
        .map(|_| {
            (0..rng.random_range(5..30))
                .map(|_| {
                    let u: f64 = rng.random();
                    TokenId(((u * u) * size as f64) as u32)
                })
                .collect()
        })
        .collect();
    let smoothing = rng.random_range(0.0..0.5);
    NGramModel::train(vocab, order, smoothing, &seqs).expect("valid training data")
}

fn random_params(rng: &mut ChaCha8Rng) -> TreeParams {
    let root_top_k = rng.random_range(1..5);
    TreeParams {
        max_depth: rng.random_range(1..5),
        max_branch: rng.random_range(1..4),
        root_top_k,
        max_nodes: rng.random_range(root_top_k..root_top_k + 12),
    }
}

fn random_context(rng: &mut ChaCha8Rng, size: usize) -> Vec<TokenId> {
    (0..rng.random_range(1..5))
        .map(|_| TokenId(rng.random_range(0..size as u32)))
        .collect()
}

fn random_dist(rng: &mut ChaCha8Rng, size: usize) -> ProbDist {
    let mut w: Vec<f64> = (0..size)
        .map(|_| if rng.random::<f64>() < 0.2 { 0.0 } else { rng.random() })
        .collect();
    w[rng.random_range(0..size)] += 0.1;
    ProbDist::from_weights(w).expect("positive mass")
}

fn tree_check(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    const CASES: usize = 200;
    for case in 0..CASES {
        let size = rng.random_range(2..7);
        let order = rng.random_range(1..4);
        let model = random_model(rng, size, order);
        let params = random_params(rng);
        let ctx = random_context(rng, size);
        let tree = build_draft_tree(&model, &ctx, &params).map_err(|e| e.to_string())?;
        let all = enumerate_paths(&model, &ctx, &params).map_err(|e| e.to_string())?;
        let kept = best_first_selection(&all, &params);
        if kept.len() != tree.len() {
            return Err(format!("case {case}: {} nodes, oracle {}", tree.len(), kept.len()));
        }
        for (i, (idx, parent)) in kept.iter().enumerate() {
            if tree.path_tokens(NodeId(i)) != all[*idx].path || tree.nodes[i].parent != parent.map(NodeId) {
                return Err(format!("case {case}: node {i} differs"));
            }
        }
        let mask = tree_attention_mask(&tree);
        for (r, row) in ancestor_mask(&tree).iter().enumerate() {
            if mask.row(r) != row.as_slice() {
                return Err(format!("case {case}: mask row {r} differs"));
            }
        }
    }
    Ok(CASES)
}

fn scoring_check(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    const CASES: usize = 200;
    for case in 0..CASES {
        let size = rng.random_range(2..8);
        let draft_order = rng.random_range(1..3);
        let draft = random_model(rng, size, draft_order);
        let target = random_model(rng, size, 3);
        let params = random_params(rng);
        let ctx = random_context(rng, size);
        let tree = build_draft_tree(&draft, &ctx, &params).map_err(|e| e.to_string())?;
        let fast = score_tree(&target, &ctx, &tree).map_err(|e| e.to_string())?;
        let slow = sequential_scores(&target, &ctx, &tree).map_err(|e| e.to_string())?;
        for (s, (pt, alpha, h)) in fast.scores.iter().zip(&slow) {
            let worst = (s.p_target - pt)
                .abs()
                .max((s.alpha - alpha).abs())
                .max((s.target_entropy - h).abs());
            if worst > 1e-12 {
                return Err(format!("case {case}: node {} off by {worst:e}", s.node.0));
            }
        }
    }
    Ok(CASES)
}

fn preservation_check(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    const CASES: usize = 100;
    for case in 0..CASES {
        let size = rng.random_range(2..=5);
        let (target, draft) = (random_dist(rng, size), random_dist(rng, size));
        let mut mass = vec![0.0; size];
        let mut rejected = 0.0;
        for (y, &d) in draft.probs().iter().enumerate() {
            if d > 0.0 {
                let alpha = acceptance_prob(target.probs()[y], d).map_err(|e| e.to_string())?;
                mass[y] += d * alpha;
                rejected += d * (1.0 - alpha);
            }
        }
        let residual = residual_distribution(&target, &draft).map_err(|e| e.to_string())?;
        for (m, r) in mass.iter_mut().zip(residual.as_ref().unwrap_or(&target).probs()) {
            *m += rejected * r;
        }
        for (m, t) in mass.iter().zip(target.probs()) {
            if (m - t).abs() > 1e-12 {
                return Err(format!("case {case}: mass {m} vs target {t}"));
            }
        }
    }
    Ok(CASES)
}

fn spearman_check(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    const CASES: usize = 30;
    for case in 0..CASES {
        let n = rng.random_range(2..300);
        let levels = rng.random_range(2..20);
        let pairs: Vec<(f64, f64)> = (0..n)
            .map(|_| (rng.random_range(0..levels) as f64, rng.random_range(0..levels) as f64))
            .collect();
        let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let same_bits = average_ranks(&x)
            .iter()
            .zip(naive_average_ranks(&x))
            .all(|(a, b)| a.to_bits() == b.to_bits());
        if !same_bits {
            return Err(format!("case {case}: rank vectors differ"));
        }
        match (spearman_rho(&pairs), naive_spearman(&pairs)) {
            (Ok(a), Some(b)) if (a - b).abs() <= 1e-12 => {}
            (Err(_), None) => {}
            (a, b) => return Err(format!("case {case}: rho {a:?} vs {b:?}")),
        }
    }
    Ok(CASES)
}

fn moments_check(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    const CASES: usize = 1000;
    let records: Vec<NodeRecord> = (0..CASES)
        .map(|i| NodeRecord {
            domain: ["a", "b"][i % 2].to_string(),
            prompt_id: i / 10,
            step_index: i % 10,
            depth: 1 + i % 3,
            position_bin: 0,
            token: TokenId(0),
            p_draft: 0.5,
            p_target: 0.5,
            alpha: rng.random(),
            target_entropy: rng.random_range(0.0..3.0),
        })
        .collect();
    let summaries = summarize(&records).map_err(|e| e.to_string())?;
    let mut by_domain: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in &records {
        by_domain.entry(&r.domain).or_default().push(r.alpha);
    }
    for (domain, alphas) in by_domain {
        let (mean, std) = two_pass_mean_std(&alphas);
        let s = &summaries[domain];
        if (s.mean_alpha - mean).abs() > 1e-12 || (s.std_alpha - std).abs() > 1e-12 {
            return Err(format!("{domain}: ({}, {}) vs ({mean}, {std})", s.mean_alpha, s.std_alpha));
        }
    }
    Ok(CASES)
}

fn chain_check(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    const TRIALS: usize = 100_000;
    let alphas: Vec<f64> = (0..3).map(|_| rng.random_range(0.2..0.9)).collect();
    let path: Vec<NodeScore> = alphas
        .iter()
        .enumerate()
        .map(|(i, &alpha)| NodeScore {
            node: NodeId(i),
            p_target: alpha,
            alpha,
            target_entropy: 0.0,
        })
        .collect();
    let total: usize = (0..TRIALS).map(|_| simulate_chain_acceptance(&path, rng)).sum();
    let mean = total as f64 / TRIALS as f64;
    let map: BTreeMap<usize, f64> = alphas.iter().enumerate().map(|(i, a)| (i + 1, *a)).collect();
    let closed = expected_accepted_length(&map).map_err(|e| e.to_string())?;
    if (mean - closed).abs() > 0.02 {
        return Err(format!("simulated {mean} vs closed form {closed}"));
    }
    Ok(TRIALS)
}
