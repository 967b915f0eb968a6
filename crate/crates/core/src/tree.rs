//! Draft-tree construction and the tree-attention ancestor mask.
//!
//! The tree is grown best-first: the root candidates are the draft's top-k
//! tokens at the committed context, then the unexpanded node with the highest
//! cumulative draft log-probability is expanded into its top-b children until
//! the node budget is spent or no node below the depth cap is left. Ties go to
//! the node inserted first.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{top_candidates, LanguageModel, ProbDist, TokenId};

/// Position of a node in [`DraftTree::nodes`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

/// Shape limits of a draft tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub max_branch: usize,
    pub root_top_k: usize,
    pub max_nodes: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 3,
            max_branch: 2,
            root_top_k: 3,
            max_nodes: 8,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == 0 {
            return Err(Error::out_of_range("max_depth", self.max_depth, ">= 1"));
        }
        if self.max_branch == 0 {
            return Err(Error::out_of_range("max_branch", self.max_branch, ">= 1"));
        }
        if self.root_top_k == 0 {
            return Err(Error::out_of_range("root_top_k", self.root_top_k, ">= 1"));
        }
        if self.max_nodes < self.root_top_k {
            return Err(Error::out_of_range(
                "max_nodes",
                self.max_nodes,
                ">= root_top_k",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub token: TokenId,
    /// 1 for root candidates.
    pub depth: usize,
    pub parent: Option<NodeId>,
    /// Draft probability of `token` given context and ancestor path.
    pub p_draft: f64,
    /// Sum of `ln p_draft` from the root candidate down to this node.
    pub cum_logp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DraftTree {
    /// Nodes in insertion order; parents always precede their children.
    pub nodes: Vec<TreeNode>,
    pub context_len: usize,
    /// Nodes in the order they were expanded.
    pub expansion_order: Vec<NodeId>,
}

impl DraftTree {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &TreeNode {
        &self.nodes[id.0]
    }

    pub fn children(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(move |(_, n)| n.parent == Some(id))
            .map(|(i, _)| NodeId(i))
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.children(id).next().is_none()
    }

    pub fn max_depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Tokens from the root candidate down to and including `id`.
    pub fn path_tokens(&self, id: NodeId) -> Vec<TokenId> {
        path_of(&self.nodes, id)
    }

    /// Leaves in insertion order.
    pub fn leaves(&self) -> Vec<NodeId> {
        let mut has_child = vec![false; self.nodes.len()];
        for n in &self.nodes {
            if let Some(p) = n.parent {
                has_child[p.0] = true;
            }
        }
        (0..self.nodes.len())
            .filter(|i| !has_child[*i])
            .map(NodeId)
            .collect()
    }

    /// Plain-text adjacency listing, one node per line:
    /// `id parent token depth p_draft cum_logp` (parent `-` for roots).
    pub fn dump(&self, token_name: impl Fn(TokenId) -> String) -> String {
        let mut out = String::from("id\tparent\ttoken\tdepth\tp_draft\tcum_logp\n");
        for (i, n) in self.nodes.iter().enumerate() {
            let parent = n.parent.map_or("-".to_string(), |p| p.0.to_string());
            let _ = writeln!(
                out,
                "{i}\t{parent}\t{}\t{}\t{:.6}\t{:.6}",
                token_name(n.token),
                n.depth,
                n.p_draft,
                n.cum_logp
            );
        }
        out
    }
}

fn path_of(nodes: &[TreeNode], id: NodeId) -> Vec<TokenId> {
    let mut path = Vec::with_capacity(nodes[id.0].depth);
    let mut cur = Some(id);
    while let Some(c) = cur {
        path.push(nodes[c.0].token);
        cur = nodes[c.0].parent;
    }
    path.reverse();
    path
}

/// Grows a draft tree at `context`.
///
/// Candidates the draft assigns zero probability are never added. Each
/// expansion scores the full `context ++ path` afresh; when a node's draft
/// distribution is needed, every pending node at the same depth is scored in
/// the same batched call.
pub fn build_draft_tree<M: LanguageModel + ?Sized>(
    draft: &M,
    context: &[TokenId],
    params: &TreeParams,
) -> Result<DraftTree> {
    params.validate()?;
    if context.is_empty() {
        return Err(Error::Empty("draft tree context"));
    }
    let root_dist = draft.next_token_dist(context)?;
    let k = params.root_top_k.min(root_dist.len());
    let mut nodes: Vec<TreeNode> = top_candidates(&root_dist, k)?
        .into_iter()
        .filter(|(_, p)| *p > 0.0)
        .map(|(token, p)| TreeNode {
            token,
            depth: 1,
            parent: None,
            p_draft: p,
            cum_logp: p.ln(),
        })
        .collect();

    let mut expanded: Vec<bool> = vec![false; nodes.len()];
    let mut dists: Vec<Option<ProbDist>> = vec![None; nodes.len()];
    let mut expansion_order = Vec::new();

    while nodes.len() < params.max_nodes {
        let Some(best) = select_next(&nodes, &expanded, params.max_depth) else {
            break;
        };
        if dists[best].is_none() {
            let depth = nodes[best].depth;
            let batch: Vec<usize> = (0..nodes.len())
                .filter(|&i| nodes[i].depth == depth && !expanded[i] && dists[i].is_none())
                .collect();
            let contexts: Vec<Vec<TokenId>> = batch
                .iter()
                .map(|&i| {
                    let mut c = context.to_vec();
                    c.extend(path_of(&nodes, NodeId(i)));
                    c
                })
                .collect();
            for (i, d) in batch.into_iter().zip(draft.next_token_dists(&contexts)?) {
                dists[i] = Some(d);
            }
        }
        expanded[best] = true;
        expansion_order.push(NodeId(best));
        let dist = dists[best].take().expect("scored above");
        let budget = params.max_nodes - nodes.len();
        let b = params.max_branch.min(dist.len()).min(budget);
        let parent = &nodes[best];
        let (depth, base) = (parent.depth + 1, parent.cum_logp);
        let children: Vec<TreeNode> = top_candidates(&dist, b)?
            .into_iter()
            .filter(|(_, p)| *p > 0.0)
            .map(|(token, p)| TreeNode {
                token,
                depth,
                parent: Some(NodeId(best)),
                p_draft: p,
                cum_logp: base + p.ln(),
            })
            .collect();
        for child in children {
            nodes.push(child);
            expanded.push(false);
            dists.push(None);
        }
    }

    Ok(DraftTree {
        nodes,
        context_len: context.len(),
        expansion_order,
    })
}

/// Highest `cum_logp` among unexpanded nodes below the depth cap; earliest
/// insertion wins ties.
fn select_next(nodes: &[TreeNode], expanded: &[bool], max_depth: usize) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, n) in nodes.iter().enumerate() {
        if expanded[i] || n.depth >= max_depth {
            continue;
        }
        if best.is_none_or(|b| n.cum_logp > nodes[b].cum_logp) {
            best = Some(i);
        }
    }
    best
}

/// Square boolean visibility matrix over `context_len + nodes` positions.
///
/// Context positions occupy rows `0..context_len`; node `i` is row
/// `context_len + i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    size: usize,
    bits: Vec<bool>,
}

impl AttentionMask {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.size + col]
    }

    pub fn row(&self, row: usize) -> &[bool] {
        &self.bits[row * self.size..(row + 1) * self.size]
    }
}

/// Each context position sees the context up to itself; each node sees the
/// whole context, its ancestors and itself, and nothing on sibling branches.
pub fn tree_attention_mask(tree: &DraftTree) -> AttentionMask {
    let ctx = tree.context_len;
    let size = ctx + tree.len();
    let mut bits = vec![false; size * size];
    for i in 0..ctx {
        bits[i * size..i * size + i + 1].fill(true);
    }
    for (i, node) in tree.nodes.iter().enumerate() {
        let row = ctx + i;
        bits[row * size..row * size + ctx].fill(true);
        bits[row * size + row] = true;
        // parents precede children, so the parent's row is already final
        if let Some(p) = node.parent {
            let prow = ctx + p.0;
            for col in ctx..prow + 1 {
                if bits[prow * size + col] {
                    bits[row * size + col] = true;
                }
            }
        }
    }
    AttentionMask { size, bits }
}

/// One token path per leaf, depth 1 first, in leaf insertion order.
pub fn root_to_leaf_paths(tree: &DraftTree) -> Vec<Vec<TokenId>> {
    tree.leaves()
        .into_iter()
        .map(|leaf| tree.path_tokens(leaf))
        .collect()
}
