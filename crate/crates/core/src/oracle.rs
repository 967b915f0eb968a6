//! Slow, direct reference implementations used to cross-check the engine.
//!
//! Each function here recomputes a result by the most literal route available
//! (exhaustive enumeration, explicit parent walks, per-node sequential model
//! calls, quadratic rank counting) and shares no code path with the module it
//! checks beyond the model interface itself.

use crate::error::Result;
use crate::model::{LanguageModel, TokenId};
use crate::tree::{DraftTree, NodeId, TreeParams};

/// 1-based average ranks by pairwise counting: `1 + #less + (#equal - 1) / 2`.
pub fn naive_average_ranks(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|v| {
            let less = values.iter().filter(|u| *u < v).count();
            let equal = values.iter().filter(|u| *u == v).count();
            1.0 + less as f64 + (equal - 1) as f64 / 2.0
        })
        .collect()
}

/// Spearman ρ from quadratic ranks and a textbook Pearson formula; `None`
/// when a variable is constant.
pub fn naive_spearman(pairs: &[(f64, f64)]) -> Option<f64> {
    let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let (rx, ry) = (naive_average_ranks(&x), naive_average_ranks(&y));
    let n = rx.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
    let (mx, my) = (mean(&rx), mean(&ry));
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        None
    } else {
        Some(cov / (vx * vy).sqrt())
    }
}

/// Two-pass mean and population standard deviation.
pub fn two_pass_mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// A node of the exhaustively enumerated tree.
#[derive(Debug, Clone, PartialEq)]
pub struct EnumeratedNode {
    pub path: Vec<TokenId>,
    pub p_draft: f64,
    pub cum_logp: f64,
    /// Indices into the enumeration of this node's children, best first.
    pub children: Vec<usize>,
}

/// Every path reachable with top-k roots and top-b children down to the depth
/// cap, each distribution obtained by its own `next_token_dist` call.
pub fn enumerate_paths<M: LanguageModel + ?Sized>(
    draft: &M,
    context: &[TokenId],
    params: &TreeParams,
) -> Result<Vec<EnumeratedNode>> {
    fn ranked<M: LanguageModel + ?Sized>(
        draft: &M,
        ctx: &[TokenId],
        k: usize,
    ) -> Result<Vec<(TokenId, f64)>> {
        let dist = draft.next_token_dist(ctx)?;
        let mut all: Vec<(TokenId, f64)> = dist
            .probs()
            .iter()
            .enumerate()
            .map(|(i, p)| (TokenId::from(i), *p))
            .collect();
        // stable sort keeps ascending index among equal probabilities
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite"));
        all.truncate(k);
        all.retain(|(_, p)| *p > 0.0);
        Ok(all)
    }

    let mut nodes: Vec<EnumeratedNode> = Vec::new();
    let mut stack: Vec<usize> = Vec::new();
    for (tok, p) in ranked(draft, context, params.root_top_k)? {
        nodes.push(EnumeratedNode {
            path: vec![tok],
            p_draft: p,
            cum_logp: p.ln(),
            children: Vec::new(),
        });
        stack.push(nodes.len() - 1);
    }
    while let Some(i) = stack.pop() {
        if nodes[i].path.len() >= params.max_depth {
            continue;
        }
        let mut ctx = context.to_vec();
        ctx.extend(&nodes[i].path);
        for (tok, p) in ranked(draft, &ctx, params.max_branch)? {
            let mut path = nodes[i].path.clone();
            path.push(tok);
            let cum_logp = nodes[i].cum_logp + p.ln();
            nodes.push(EnumeratedNode {
                path,
                p_draft: p,
                cum_logp,
                children: Vec::new(),
            });
            let child = nodes.len() - 1;
            nodes[i].children.push(child);
            stack.push(child);
        }
    }
    Ok(nodes)
}

/// Selects from an enumeration the nodes a best-first build keeps: start from
/// the roots, repeatedly open the kept, unopened, non-maximal-depth node with
/// the largest cumulative log-probability (earliest kept wins ties) and keep
/// its children in rank order until `max_nodes` are kept.
///
/// Returns `(enumeration index, parent position in the kept list)` in keep
/// order.
pub fn best_first_selection(
    nodes: &[EnumeratedNode],
    params: &TreeParams,
) -> Vec<(usize, Option<usize>)> {
    let roots = nodes.iter().take_while(|n| n.path.len() == 1).count();
    let mut kept: Vec<(usize, Option<usize>)> =
        (0..roots.min(params.max_nodes)).map(|i| (i, None)).collect();
    let mut opened = vec![false; kept.len()];
    loop {
        if kept.len() >= params.max_nodes {
            break;
        }
        let candidates: Vec<usize> = (0..kept.len())
            .filter(|&k| !opened[k] && nodes[kept[k].0].path.len() < params.max_depth)
            .collect();
        let Some(&first) = candidates.first() else {
            break;
        };
        let pick = candidates.iter().fold(first, |best, &k| {
            if nodes[kept[k].0].cum_logp > nodes[kept[best].0].cum_logp {
                k
            } else {
                best
            }
        });
        opened[pick] = true;
        let room = params.max_nodes - kept.len();
        for &child in nodes[kept[pick].0].children.iter().take(room) {
            kept.push((child, Some(pick)));
            opened.push(false);
        }
    }
    kept
}

/// Visibility matrix derived by walking parent links for every node.
pub fn ancestor_mask(tree: &DraftTree) -> Vec<Vec<bool>> {
    let ctx = tree.context_len;
    let size = ctx + tree.len();
    let mut mask = vec![vec![false; size]; size];
    for (i, row) in mask.iter_mut().enumerate().take(ctx) {
        for cell in row.iter_mut().take(i + 1) {
            *cell = true;
        }
    }
    for i in 0..tree.len() {
        let row = &mut mask[ctx + i];
        for cell in row.iter_mut().take(ctx) {
            *cell = true;
        }
        let mut cur = Some(NodeId(i));
        while let Some(id) = cur {
            row[ctx + id.0] = true;
            cur = tree.nodes[id.0].parent;
        }
    }
    mask
}

/// All root-to-leaf token paths by depth-first recursion over child links.
pub fn dfs_paths(tree: &DraftTree) -> Vec<Vec<TokenId>> {
    fn walk(tree: &DraftTree, id: usize, prefix: &mut Vec<TokenId>, out: &mut Vec<Vec<TokenId>>) {
        prefix.push(tree.nodes[id].token);
        let kids: Vec<usize> = (0..tree.len())
            .filter(|&j| tree.nodes[j].parent == Some(NodeId(id)))
            .collect();
        if kids.is_empty() {
            out.push(prefix.clone());
        }
        for k in kids {
            walk(tree, k, prefix, out);
        }
        prefix.pop();
    }
    let mut out = Vec::new();
    for root in (0..tree.len()).filter(|&i| tree.nodes[i].parent.is_none()) {
        walk(tree, root, &mut Vec::new(), &mut out);
    }
    out
}

/// Per-node `(p_target, alpha, entropy)` from one unbatched target call per
/// node on `context ++ ancestor path`.
pub fn sequential_scores<M: LanguageModel + ?Sized>(
    target: &M,
    context: &[TokenId],
    tree: &DraftTree,
) -> Result<Vec<(f64, f64, f64)>> {
    (0..tree.len())
        .map(|i| {
            let node = &tree.nodes[i];
            let mut ctx = context.to_vec();
            let path = tree.path_tokens(NodeId(i));
            ctx.extend(&path[..path.len() - 1]);
            let dist = target.next_token_dist(&ctx)?;
            let pt = dist.probs()[node.token.index()];
            let alpha = if pt >= node.p_draft { 1.0 } else { pt / node.p_draft };
            let mut h = 0.0;
            for p in dist.probs() {
                if *p > 0.0 {
                    h -= p * p.ln();
                }
            }
            Ok((pt, alpha, h))
        })
        .collect()
}
