#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use serde::Deserialize;
use treespec::{NGramModel, TokenId, TreeParams, Vocabulary};

pub fn vocab(n: usize) -> Arc<Vocabulary> {
    Arc::new(Vocabulary::new((0..n).map(|i| format!("t{i}"))).unwrap())
}

pub fn ids(v: &[u32]) -> Vec<TokenId> {
    v.iter().copied().map(TokenId).collect()
}

/// An n-gram model trained on random, skewed sequences so that its
/// conditionals differ from context to context.
pub fn random_ngram<R: Rng>(rng: &mut R, size: usize, order: usize, smoothing: f64) -> NGramModel {
    let seqs: Vec<Vec<TokenId>> = (0..rng.random_range(1..5))
        .map(|_| {
            let len = rng.random_range(5..40);
            (0..len)
                .map(|_| {
                    // squaring skews mass toward low ids
                    let u: f64 = rng.random();
                    TokenId(((u * u) * size as f64) as u32)
                })
                .collect()
        })
        .collect();
    NGramModel::train(vocab(size), order, smoothing, &seqs).unwrap()
}

pub fn random_params<R: Rng>(rng: &mut R) -> TreeParams {
    let root_top_k = rng.random_range(1..5);
    TreeParams {
        max_depth: rng.random_range(1..5),
        max_branch: rng.random_range(1..4),
        root_top_k,
        max_nodes: rng.random_range(root_top_k..root_top_k + 14),
    }
}

#[derive(Debug, Deserialize)]
pub struct SummaryRow {
    pub nodes: usize,
    pub mean_alpha: f64,
    pub std_alpha: f64,
    pub mean_entropy: f64,
}

#[derive(Debug, Deserialize)]
pub struct PositionRow {
    pub early: f64,
    pub late: f64,
    pub delta: f64,
}

#[derive(Debug, Deserialize)]
pub struct ReferenceTables {
    pub summary: BTreeMap<String, SummaryRow>,
    pub summary_all: SummaryRow,
    pub expected_len: BTreeMap<String, f64>,
    pub chain_prob: BTreeMap<String, Vec<f64>>,
    pub depth_alpha: BTreeMap<String, Vec<f64>>,
    pub depth_delta: BTreeMap<String, f64>,
    pub position: BTreeMap<String, PositionRow>,
    pub spearman_rho: BTreeMap<String, f64>,
}

pub fn reference_tables() -> ReferenceTables {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/reference_tables.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

pub fn depth_map(alphas: &[f64]) -> BTreeMap<usize, f64> {
    alphas.iter().enumerate().map(|(i, a)| (i + 1, *a)).collect()
}
