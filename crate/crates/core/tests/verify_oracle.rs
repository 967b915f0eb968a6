mod common;

use common::{ids, random_ngram, random_params};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use treespec::corpus::{build_corpora, train_models, Tokenizer};
use treespec::oracle::sequential_scores;
use treespec::tree::{build_draft_tree, NodeId};
use treespec::verify::{score_tree, simulate_chain_acceptance, NodeScore};
use treespec::{LanguageModel, TokenId, TreeParams};

fn assert_batched_equals_sequential<D: LanguageModel, T: LanguageModel>(
    draft: &D,
    target: &T,
    ctx: &[TokenId],
    params: &TreeParams,
) {
    let tree = build_draft_tree(draft, ctx, params).unwrap();
    let batched = score_tree(target, ctx, &tree).unwrap();
    let seq = sequential_scores(target, ctx, &tree).unwrap();
    assert_eq!(batched.scores.len(), tree.len());
    for (i, (s, (pt, alpha, h))) in batched.scores.iter().zip(&seq).enumerate() {
        assert_eq!(s.node, NodeId(i));
        assert_eq!(s.p_target, *pt, "p_target of node {i}");
        assert!((s.alpha - alpha).abs() <= 1e-15, "alpha of node {i}");
        assert!((s.target_entropy - h).abs() < 1e-12, "entropy of node {i}");
    }
    let bonus = target.next_token_dist(ctx).unwrap().argmax();
    assert_eq!(batched.bonus, bonus);
}

#[test]
fn bigram_draft_trigram_target_on_six_token_corpus() {
    let raw = vec![("d".to_string(), vec!["a b c a b d".to_string()])];
    let corpora = build_corpora(&raw, Tokenizer::Whitespace).unwrap();
    let (draft, target) = train_models(&corpora, 2, 3, 0.2).unwrap();
    let v = &corpora[0].vocab;
    let ctx: Vec<TokenId> = ["c", "a"].iter().map(|t| v.id(t).unwrap()).collect();
    assert_batched_equals_sequential(&draft, &target, &ctx, &TreeParams::default());
}

#[test]
fn random_small_trees_match_sequential_scoring() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..300 {
        let size = rng.random_range(2..7);
        let draft = random_ngram(&mut rng, size, 2, 0.4);
        let target = random_ngram(&mut rng, size, 3, 0.1);
        let ctx: Vec<TokenId> = (0..rng.random_range(1..4))
            .map(|_| TokenId(rng.random_range(0..size as u32)))
            .collect();
        assert_batched_equals_sequential(&draft, &target, &ctx, &random_params(&mut rng));
    }
}

#[test]
fn mean_accepted_length_follows_product_law() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..5 {
        let depth = rng.random_range(1..5);
        let alphas: Vec<f64> = (0..depth).map(|_| rng.random_range(0.2..1.0)).collect();
        let path: Vec<NodeScore> = alphas
            .iter()
            .map(|&alpha| NodeScore { node: NodeId(0), p_target: 0.0, alpha, target_entropy: 0.0 })
            .collect();
        let expected: f64 = (1..=depth).map(|d| alphas[..d].iter().product::<f64>()).sum();
        let trials = 200_000;
        let lens: Vec<f64> = (0..trials)
            .map(|_| simulate_chain_acceptance(&path, &mut rng) as f64)
            .collect();
        let mean = lens.iter().sum::<f64>() / trials as f64;
        let var = lens.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
        let se = (var / trials as f64).sqrt();
        assert!((mean - expected).abs() < 3.0 * se, "mean {mean} expected {expected} se {se}");
    }
}

#[test]
fn context_must_be_in_vocabulary() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = random_ngram(&mut rng, 3, 2, 0.1);
    assert!(build_draft_tree(&m, &ids(&[9]), &TreeParams::default()).is_err());
}
