//! Browser bindings: each export takes plain strings and numbers and returns
//! a JSON document for the demo page.

use std::collections::BTreeMap;

use serde_json::{json, Value};
use treespec::corpus::{build_corpora, encode, tokenize, train_models, Tokenizer};
use treespec::metrics::{chain_probabilities, expected_accepted_length};
use treespec::model::entropy_nats;
use treespec::report::speedup_regime;
use treespec::tree::{build_draft_tree, tree_attention_mask, NodeId};
use treespec::verify::{acceptance_prob, residual_distribution, score_tree};
use treespec::{ProbDist, TreeParams};
use wasm_bindgen::prelude::*;

type Outcome = Result<String, String>;

fn err(e: impl ToString) -> String {
    e.to_string()
}

/// Trains a draft/target n-gram pair on `corpus` (documents separated by
/// blank lines), then builds and scores one draft tree for `context`.
#[allow(clippy::too_many_arguments)]
pub fn draft_tree_json(
    corpus: &str,
    context: &str,
    max_depth: usize,
    max_branch: usize,
    root_top_k: usize,
    max_nodes: usize,
    draft_order: usize,
    target_order: usize,
    smoothing: f64,
) -> Outcome {
    let docs: Vec<String> = corpus
        .split("\n\n")
        .map(str::trim)
        .filter(|d| !d.is_empty())
        .map(str::to_owned)
        .collect();
    let corpora = build_corpora(&[("demo".to_string(), docs)], Tokenizer::Whitespace).map_err(err)?;
    if corpora[0].documents.is_empty() {
        return Err("the corpus is empty".into());
    }
    let (draft, target) = train_models(&corpora, draft_order, target_order, smoothing).map_err(err)?;
    let vocab = draft.shared_vocab().clone();
    let ctx = encode(&tokenize(context, Tokenizer::Whitespace), &vocab);
    let params = TreeParams {
        max_depth,
        max_branch,
        root_top_k,
        max_nodes,
    };
    params.validate().map_err(err)?;
    let tree = build_draft_tree(&draft, &ctx, &params).map_err(err)?;
    let scores = score_tree(&target, &ctx, &tree).map_err(err)?;
    let name = |t| vocab.token(t).unwrap_or("?").to_string();

    let nodes: Vec<Value> = tree
        .nodes
        .iter()
        .zip(&scores.scores)
        .enumerate()
        .map(|(i, (n, s))| {
            json!({
                "id": i,
                "parent": n.parent.map(|p| p.0),
                "token": name(n.token),
                "depth": n.depth,
                "p_draft": n.p_draft,
                "cum_logp": n.cum_logp,
                "p_target": s.p_target,
                "alpha": s.alpha,
                "target_entropy": s.target_entropy,
                "leaf": tree.is_leaf(NodeId(i)),
            })
        })
        .collect();
    let mask = tree_attention_mask(&tree);
    let rows: Vec<String> = (tree.context_len..mask.size())
        .map(|r| {
            mask.row(r)[tree.context_len..]
                .iter()
                .map(|b| if *b { '1' } else { '0' })
                .collect()
        })
        .collect();
    Ok(json!({
        "vocab_size": vocab.size(),
        "context": ctx.iter().map(|t| name(*t)).collect::<Vec<_>>(),
        "nodes": nodes,
        "mask": rows,
        "bonus": name(scores.bonus),
    })
    .to_string())
}

fn parse_numbers(text: &str) -> Result<Vec<f64>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| format!("not a number: {s:?}")))
        .collect()
}

/// Chain probabilities and expected accepted length from per-depth mean
/// acceptance values listed from depth 1.
pub fn chain_profile_json(alphas: &str) -> Outcome {
    let alphas = parse_numbers(alphas)?;
    if let Some(a) = alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(format!("acceptance {a} is outside [0, 1]"));
    }
    let map: BTreeMap<usize, f64> = alphas.iter().enumerate().map(|(i, a)| (i + 1, *a)).collect();
    let chain = chain_probabilities(&map).map_err(err)?;
    let expected = expected_accepted_length(&map).map_err(err)?;
    Ok(json!({
        "chain": chain.values().collect::<Vec<_>>(),
        "expected_len": expected,
        "regime": speedup_regime(expected),
    })
    .to_string())
}

/// Per-token acceptance, residual and entropy for a target/draft pair given
/// as non-negative weights (normalized here).
pub fn acceptance_json(target: &str, draft: &str) -> Outcome {
    let target = ProbDist::from_weights(parse_numbers(target)?).map_err(err)?;
    let draft = ProbDist::from_weights(parse_numbers(draft)?).map_err(err)?;
    if target.len() != draft.len() {
        return Err(format!("target has {} entries, draft {}", target.len(), draft.len()));
    }
    let alpha = target
        .probs()
        .iter()
        .zip(draft.probs())
        .map(|(t, d)| if *d > 0.0 { acceptance_prob(*t, *d).map(Some) } else { Ok(None) })
        .collect::<treespec::Result<Vec<_>>>()
        .map_err(err)?;
    let accept: f64 = target.probs().iter().zip(draft.probs()).map(|(t, d)| t.min(*d)).sum();
    let residual = residual_distribution(&target, &draft).map_err(err)?;
    Ok(json!({
        "target": target.probs(),
        "draft": draft.probs(),
        "alpha": alpha,
        "accept_prob": accept,
        "residual": residual.as_ref().map(|r| r.probs().to_vec()),
        "target_entropy": entropy_nats(&target),
    })
    .to_string())
}

#[wasm_bindgen(js_name = draftTree)]
#[allow(clippy::too_many_arguments)]
pub fn draft_tree(
    corpus: &str,
    context: &str,
    max_depth: usize,
    max_branch: usize,
    root_top_k: usize,
    max_nodes: usize,
    draft_order: usize,
    target_order: usize,
    smoothing: f64,
) -> Result<String, JsError> {
    draft_tree_json(
        corpus,
        context,
        max_depth,
        max_branch,
        root_top_k,
        max_nodes,
        draft_order,
        target_order,
        smoothing,
    )
    .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = chainProfile)]
pub fn chain_profile(alphas: &str) -> Result<String, JsError> {
    chain_profile_json(alphas).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn acceptance(target: &str, draft: &str) -> Result<String, JsError> {
    acceptance_json(target, draft).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Value {
        serde_json::from_str(s).unwrap()
    }

    const CORPUS: &str = "the cat sat on the mat\n\nthe cat ate the rat\n\na dog sat on the cat";

    #[test]
    fn tree_has_bounded_nodes_and_lower_triangular_mask() {
        let v = parse(&draft_tree_json(CORPUS, "the cat", 3, 2, 3, 8, 2, 3, 0.1).unwrap());
        let nodes = v["nodes"].as_array().unwrap();
        assert!(!nodes.is_empty() && nodes.len() <= 8);
        let mask = v["mask"].as_array().unwrap();
        assert_eq!(mask.len(), nodes.len());
        for (i, row) in mask.iter().enumerate() {
            let row = row.as_str().unwrap().as_bytes();
            assert_eq!(row[i], b'1');
            assert!(row[i + 1..].iter().all(|c| *c == b'0'));
        }
        for n in nodes {
            let a = n["alpha"].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn tree_rejects_bad_input() {
        assert!(draft_tree_json("", "x", 3, 2, 3, 8, 2, 3, 0.1).is_err());
        assert!(draft_tree_json(CORPUS, "", 3, 2, 3, 8, 2, 3, 0.1).is_err());
        assert!(draft_tree_json(CORPUS, "the", 3, 2, 3, 2, 2, 3, 0.1).is_err());
        assert!(draft_tree_json(CORPUS, "the", 3, 2, 3, 8, 3, 3, 0.1).is_err());
    }

    #[test]
    fn chain_profile_of_halves() {
        let v = parse(&chain_profile_json("0.5, 0.5 0.5").unwrap());
        assert_eq!(v["chain"], json!([0.5, 0.25, 0.125]));
        assert_eq!(v["expected_len"], 0.875);
        assert_eq!(v["regime"], "Negative");
        assert!(chain_profile_json("").is_err());
        assert!(chain_profile_json("0.5, 1.5").is_err());
        assert!(chain_profile_json("0.5, x").is_err());
    }

    #[test]
    fn acceptance_of_a_pair() {
        let v = parse(&acceptance_json("3 1", "1 1").unwrap());
        assert_eq!(v["alpha"], json!([1.0, 0.5]));
        assert_eq!(v["accept_prob"], 0.75);
        assert_eq!(v["residual"], json!([1.0, 0.0]));
        let same = parse(&acceptance_json("1 2", "1 2").unwrap());
        assert_eq!(same["residual"], Value::Null);
        let zero = parse(&acceptance_json("1 1", "1 0").unwrap());
        assert_eq!(zero["alpha"], json!([0.5, null]));
        assert!(acceptance_json("1 1", "1 1 1").is_err());
        assert!(acceptance_json("0 0", "1 1").is_err());
    }
}
