//! Target-side scoring of a draft tree, and the stochastic acceptance rule.
//!
//! A node is kept with probability `min(1, p_target / p_draft)`. On rejection
//! a replacement is drawn from the residual `normalize(max(0, p_target -
//! p_draft))`, which together reproduce the target distribution exactly.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{entropy_nats, LanguageModel, ProbDist, TokenId};
use crate::tree::{DraftTree, NodeId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeScore {
    pub node: NodeId,
    pub p_target: f64,
    pub alpha: f64,
    /// Entropy (nats) of the full target distribution at the node's position.
    pub target_entropy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeScores {
    /// One score per tree node, in node order.
    pub scores: Vec<NodeScore>,
    /// Target argmax at the bare context.
    pub bonus: TokenId,
}

/// `min(1, p_target / p_draft)`.
pub fn acceptance_prob(p_target: f64, p_draft: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_target) {
        return Err(Error::out_of_range("p_target", p_target, "[0, 1]"));
    }
    if !(p_draft > 0.0 && p_draft <= 1.0) {
        return Err(Error::out_of_range("p_draft", p_draft, "(0, 1]"));
    }
    Ok((p_target / p_draft).min(1.0))
}

/// Scores every node with the target model in one batched call.
///
/// The batch holds one row per leaf path plus the empty-prefix row; each node
/// reads its target distribution from the first leaf row passing through it,
/// and the bonus token is the argmax of the empty-prefix row.
pub fn score_tree<M: LanguageModel + ?Sized>(
    target: &M,
    context: &[TokenId],
    tree: &DraftTree,
) -> Result<TreeScores> {
    let leaves = tree.leaves();
    let mut rows: Vec<Vec<TokenId>> = Vec::with_capacity(leaves.len() + 1);
    rows.push(Vec::new());
    rows.extend(leaves.iter().map(|&l| tree.path_tokens(l)));
    let dists = target.prefix_dists(context, &rows)?;

    // (row, position) of the first row covering each node
    let mut slot: Vec<Option<(usize, usize)>> = vec![None; tree.len()];
    for (r, &leaf) in leaves.iter().enumerate() {
        let mut cur = Some(leaf);
        while let Some(id) = cur {
            if slot[id.0].is_some() {
                break;
            }
            slot[id.0] = Some((r + 1, tree.node(id).depth - 1));
            cur = tree.node(id).parent;
        }
    }

    let scores = tree
        .nodes
        .iter()
        .enumerate()
        .map(|(i, node)| {
            let (r, pos) = slot[i].expect("every node lies on a leaf path");
            let dist = &dists[r][pos];
            let p_target = dist.prob(node.token);
            Ok(NodeScore {
                node: NodeId(i),
                p_target,
                alpha: acceptance_prob(p_target, node.p_draft)?,
                target_entropy: entropy_nats(dist),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(TreeScores {
        scores,
        bonus: dists[0][0].argmax(),
    })
}

/// Walks a root-to-leaf path, accepting each node with probability `alpha`,
/// and returns the accepted prefix length.
pub fn simulate_chain_acceptance<R: Rng + ?Sized>(path: &[NodeScore], rng: &mut R) -> usize {
    path.iter()
        .take_while(|s| rng.random::<f64>() < s.alpha)
        .count()
}

/// `normalize(max(0, p_target - p_draft))`, or `None` when the residual is
/// identically zero.
pub fn residual_distribution(target: &ProbDist, draft: &ProbDist) -> Result<Option<ProbDist>> {
    if target.len() != draft.len() {
        return Err(Error::Distribution(format!(
            "target has {} entries, draft {}",
            target.len(),
            draft.len()
        )));
    }
    let residual: Vec<f64> = target
        .probs()
        .iter()
        .zip(draft.probs())
        .map(|(t, d)| (t - d).max(0.0))
        .collect();
    if residual.iter().all(|r| *r == 0.0) {
        return Ok(None);
    }
    ProbDist::from_weights(residual).map(Some)
}

/// Draws a replacement token after a rejection. Falls back to the target
/// itself when the residual is zero.
pub fn residual_resample<R: Rng + ?Sized>(
    target: &ProbDist,
    draft: &ProbDist,
    rng: &mut R,
) -> Result<TokenId> {
    let residual = residual_distribution(target, draft)?;
    Ok(sample(residual.as_ref().unwrap_or(target), rng))
}

pub fn sample<R: Rng + ?Sized>(dist: &ProbDist, rng: &mut R) -> TokenId {
    let index = WeightedIndex::new(dist.probs()).expect("a valid distribution has positive mass");
    TokenId::from(index.sample(rng))
}

/// One speculative step of a single-token draft: propose from `draft`, keep
/// with probability alpha, otherwise resample from the residual.
pub fn speculative_sample<R: Rng + ?Sized>(
    target: &ProbDist,
    draft: &ProbDist,
    rng: &mut R,
) -> Result<TokenId> {
    let proposal = sample(draft, rng);
    let alpha = acceptance_prob(target.prob(proposal), draft.prob(proposal))?;
    if rng.random::<f64>() < alpha {
        Ok(proposal)
    } else {
        residual_resample(target, draft, rng)
    }
}
