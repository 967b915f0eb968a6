//! Language-model interface and the count-based reference models that play
//! the draft and target roles.
//!
//! Every model exposes a normalized next-token distribution over a shared
//! [`Vocabulary`]. The reference [`NGramModel`] is an additive-smoothed
//! order-n count model that backs off to the longest context suffix it has
//! seen during training, so it yields a valid distribution for any context.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on `Σ p = 1` for a valid distribution.
pub const PROB_SUM_TOLERANCE: f64 = 1e-9;

/// Index of a token in a [`Vocabulary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for TokenId {
    fn from(i: usize) -> Self {
        TokenId(i as u32)
    }
}

impl std::fmt::Display for TokenId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Ordered set of distinct token strings; index and token are in bijection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn new<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.len() < 2 {
            return Err(Error::Vocabulary(format!(
                "need at least 2 tokens, got {}",
                tokens.len()
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), TokenId::from(i)).is_some() {
                return Err(Error::Vocabulary(format!("duplicate token {tok:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id.index()).map(String::as_str)
    }

    pub fn contains(&self, id: TokenId) -> bool {
        id.index() < self.tokens.len()
    }

    pub fn check(&self, context: &[TokenId]) -> Result<()> {
        match context.iter().find(|t| !self.contains(**t)) {
            Some(t) => Err(Error::UnknownToken {
                id: t.0,
                size: self.size(),
            }),
            None => Ok(()),
        }
    }
}

/// Normalized probability vector over a vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbDist {
    probs: Vec<f64>,
}

impl ProbDist {
    /// Wraps `probs`, checking non-negativity and `Σ p = 1` within
    /// [`PROB_SUM_TOLERANCE`].
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Distribution("empty probability vector".into()));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::Distribution(format!("invalid probability {p}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(Error::Distribution(format!("probabilities sum to {sum}")));
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights into a distribution.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total.is_finite() && total > 0.0) || weights.iter().any(|w| *w < 0.0) {
            return Err(Error::Distribution(
                "weights must be non-negative with a positive sum".into(),
            ));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(size: usize) -> Self {
        Self {
            probs: vec![1.0 / size as f64; size],
        }
    }

    pub fn one_hot(size: usize, token: TokenId) -> Self {
        let mut probs = vec![0.0; size];
        probs[token.index()] = 1.0;
        Self { probs }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, token: TokenId) -> f64 {
        self.probs.get(token.index()).copied().unwrap_or(0.0)
    }

    /// Most probable token; ties go to the lowest index.
    pub fn argmax(&self) -> TokenId {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate().skip(1) {
            if *p > self.probs[best] {
                best = i;
            }
        }
        TokenId::from(best)
    }
}

/// The `k` most probable entries, descending by probability, ties broken by
/// ascending token index.
pub fn top_candidates(dist: &ProbDist, k: usize) -> Result<Vec<(TokenId, f64)>> {
    if k == 0 || k > dist.len() {
        return Err(Error::out_of_range("k", k, "1 <= k <= vocabulary size"));
    }
    let mut order: Vec<usize> = (0..dist.len()).collect();
    let probs = dist.probs();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    Ok(order
        .into_iter()
        .take(k)
        .map(|i| (TokenId::from(i), probs[i]))
        .collect())
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy_nats(dist: &ProbDist) -> f64 {
    let h: f64 = dist
        .probs()
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    // Rounding can push a one-hot result to -0.0 or a uniform one past ln |V|.
    h.clamp(0.0, (dist.len() as f64).ln())
}

/// A source of next-token distributions over a fixed vocabulary.
///
/// Implementations must be deterministic for a fixed context and safe to
/// share between worker threads.
pub trait LanguageModel: Send + Sync {
    fn vocab(&self) -> &Vocabulary;

    fn next_token_dist(&self, context: &[TokenId]) -> Result<ProbDist>;

    /// One batched call over several full contexts.
    fn next_token_dists(&self, contexts: &[Vec<TokenId>]) -> Result<Vec<ProbDist>> {
        contexts.iter().map(|c| self.next_token_dist(c)).collect()
    }

    /// One batched call over several continuations of a shared context.
    ///
    /// Row `i` of the result holds `paths[i].len() + 1` distributions: entry
    /// `j` is conditioned on `context ++ paths[i][..j]`. An empty path yields
    /// the single distribution at the bare context.
    fn prefix_dists(
        &self,
        context: &[TokenId],
        paths: &[Vec<TokenId>],
    ) -> Result<Vec<Vec<ProbDist>>> {
        let mut buf = context.to_vec();
        paths
            .iter()
            .map(|path| {
                buf.truncate(context.len());
                let mut row = Vec::with_capacity(path.len() + 1);
                row.push(self.next_token_dist(&buf)?);
                for tok in path {
                    buf.push(*tok);
                    row.push(self.next_token_dist(&buf)?);
                }
                Ok(row)
            })
            .collect()
    }
}

impl<M: LanguageModel + ?Sized> LanguageModel for Arc<M> {
    fn vocab(&self) -> &Vocabulary {
        (**self).vocab()
    }
    fn next_token_dist(&self, context: &[TokenId]) -> Result<ProbDist> {
        (**self).next_token_dist(context)
    }
    fn next_token_dists(&self, contexts: &[Vec<TokenId>]) -> Result<Vec<ProbDist>> {
        (**self).next_token_dists(contexts)
    }
    fn prefix_dists(
        &self,
        context: &[TokenId],
        paths: &[Vec<TokenId>],
    ) -> Result<Vec<Vec<ProbDist>>> {
        (**self).prefix_dists(context, paths)
    }
}

/// Context-independent model returning the same distribution everywhere.
#[derive(Debug, Clone)]
pub struct FixedModel {
    vocab: Arc<Vocabulary>,
    dist: ProbDist,
}

impl FixedModel {
    pub fn new(vocab: Arc<Vocabulary>, dist: ProbDist) -> Result<Self> {
        if dist.len() != vocab.size() {
            return Err(Error::Distribution(format!(
                "distribution has {} entries for a vocabulary of {}",
                dist.len(),
                vocab.size()
            )));
        }
        Ok(Self { vocab, dist })
    }

    pub fn uniform(vocab: Arc<Vocabulary>) -> Self {
        let dist = ProbDist::uniform(vocab.size());
        Self { vocab, dist }
    }
}

impl LanguageModel for FixedModel {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_token_dist(&self, context: &[TokenId]) -> Result<ProbDist> {
        self.vocab.check(context)?;
        Ok(self.dist.clone())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct ContextCounts {
    total: u64,
    next: BTreeMap<TokenId, u64>,
}

/// Additive-smoothed order-n count model with longest-suffix backoff.
///
/// Counts are kept for every context length `0..order`, so a context that
/// was never observed at full length falls back to its longest observed
/// suffix, ending at the unigram table. Smoothing is applied at whichever
/// level is used: `P(v | c) = (count(c, v) + s) / (total(c) + s |V|)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    smoothing: f64,
    vocab: Arc<Vocabulary>,
    counts: HashMap<Vec<TokenId>, ContextCounts>,
}

const MODEL_MAGIC: &str = "treespec-ngram";
const MODEL_VERSION: u32 = 1;

impl NGramModel {
    pub fn new(vocab: Arc<Vocabulary>, order: usize, smoothing: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::out_of_range("order", order, ">= 1"));
        }
        if !(smoothing.is_finite() && smoothing >= 0.0) {
            return Err(Error::out_of_range("smoothing", smoothing, ">= 0"));
        }
        Ok(Self {
            order,
            smoothing,
            vocab,
            counts: HashMap::new(),
        })
    }

    /// Builds a model and counts every sequence in `sequences`.
    pub fn train(
        vocab: Arc<Vocabulary>,
        order: usize,
        smoothing: f64,
        sequences: &[Vec<TokenId>],
    ) -> Result<Self> {
        let mut model = Self::new(vocab, order, smoothing)?;
        for seq in sequences {
            model.observe(seq)?;
        }
        Ok(model)
    }

    /// Adds the n-gram counts of one token sequence.
    pub fn observe(&mut self, seq: &[TokenId]) -> Result<()> {
        self.vocab.check(seq)?;
        for (i, &tok) in seq.iter().enumerate() {
            let longest = (self.order - 1).min(i);
            for k in 0..=longest {
                let entry = self.counts.entry(seq[i - k..i].to_vec()).or_default();
                entry.total += 1;
                *entry.next.entry(tok).or_default() += 1;
            }
        }
        Ok(())
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn shared_vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    /// Raw count of `token` following exactly `context` (no backoff).
    pub fn count(&self, context: &[TokenId], token: TokenId) -> u64 {
        self.counts
            .get(context)
            .and_then(|c| c.next.get(&token).copied())
            .unwrap_or(0)
    }

    /// Writes the versioned text serialization.
    ///
    /// ```text
    /// treespec-ngram 1
    /// order <n>
    /// smoothing <s>
    /// vocab <size>
    /// <one JSON string per token>
    /// contexts <count>
    /// <ctx ids...> | <token>:<count> ...
    /// ```
    /// Context lines are sorted by (length, ids) so output is canonical.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MODEL_MAGIC} {MODEL_VERSION}");
        let _ = writeln!(out, "order {}", self.order);
        let _ = writeln!(out, "smoothing {}", self.smoothing);
        let _ = writeln!(out, "vocab {}", self.vocab.size());
        for tok in self.vocab.tokens() {
            let _ = writeln!(out, "{}", serde_json::to_string(tok).expect("string"));
        }
        let mut keys: Vec<&Vec<TokenId>> = self.counts.keys().collect();
        keys.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        let _ = writeln!(out, "contexts {}", keys.len());
        for key in keys {
            for t in key {
                let _ = write!(out, "{t} ");
            }
            out.push('|');
            for (t, c) in &self.counts[key].next {
                let _ = write!(out, " {t}:{c}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::Parse(format!("model file ends before {what}")))
        };
        let header = next("header")?;
        if header != format!("{MODEL_MAGIC} {MODEL_VERSION}") {
            return Err(Error::Parse(format!("unsupported model header {header:?}")));
        }
        let order: usize = parse_field(next("order")?, "order")?;
        let smoothing: f64 = parse_field(next("smoothing")?, "smoothing")?;
        let size: usize = parse_field(next("vocab")?, "vocab")?;
        let mut tokens = Vec::with_capacity(size);
        for _ in 0..size {
            let line = next("vocabulary entry")?;
            let tok: String = serde_json::from_str(line)
                .map_err(|e| Error::Parse(format!("vocabulary entry {line:?}: {e}")))?;
            tokens.push(tok);
        }
        let vocab = Arc::new(Vocabulary::new(tokens)?);
        let n_ctx: usize = parse_field(next("contexts")?, "contexts")?;
        let mut model = Self::new(vocab, order, smoothing)?;
        for _ in 0..n_ctx {
            let line = next("context line")?;
            let (ctx, rest) = line
                .split_once('|')
                .ok_or_else(|| Error::Parse(format!("context line {line:?}")))?;
            let ctx = ctx
                .split_whitespace()
                .map(parse_token)
                .collect::<Result<Vec<_>>>()?;
            model.vocab.check(&ctx)?;
            let mut counts = ContextCounts::default();
            for pair in rest.split_whitespace() {
                let (t, c) = pair
                    .split_once(':')
                    .ok_or_else(|| Error::Parse(format!("count entry {pair:?}")))?;
                let t = parse_token(t)?;
                model.vocab.check(&[t])?;
                let c: u64 = c
                    .parse()
                    .map_err(|_| Error::Parse(format!("count entry {pair:?}")))?;
                counts.total += c;
                counts.next.insert(t, c);
            }
            model.counts.insert(ctx, counts);
        }
        Ok(model)
    }

    fn lookup(&self, context: &[TokenId]) -> Option<&ContextCounts> {
        let longest = (self.order - 1).min(context.len());
        (0..=longest).rev().find_map(|k| {
            self.counts
                .get(&context[context.len() - k..])
                .filter(|c| c.total > 0)
        })
    }
}

fn parse_field<T: std::str::FromStr>(line: &str, key: &str) -> Result<T> {
    line.strip_prefix(key)
        .map(str::trim)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Parse(format!("expected `{key} <value>`, got {line:?}")))
}

fn parse_token(s: &str) -> Result<TokenId> {
    s.parse::<u32>()
        .map(TokenId)
        .map_err(|_| Error::Parse(format!("token id {s:?}")))
}

impl LanguageModel for NGramModel {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_token_dist(&self, context: &[TokenId]) -> Result<ProbDist> {
        self.vocab.check(context)?;
        let size = self.vocab.size();
        let Some(counts) = self.lookup(context) else {
            return Ok(ProbDist::uniform(size));
        };
        let denom = counts.total as f64 + self.smoothing * size as f64;
        let mut probs = vec![self.smoothing / denom; size];
        for (t, c) in &counts.next {
            probs[t.index()] = (*c as f64 + self.smoothing) / denom;
        }
        ProbDist::new(probs)
    }
}
