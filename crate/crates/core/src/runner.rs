//! Experiment orchestration: the per-step build/score/record loop over every
//! domain and prompt, and the run configuration.

use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{sample_prompts, train_models, DomainCorpus, PromptSet, Tokenizer, EOS};
use crate::error::{Error, Result};
use crate::metrics::{position_bin, summarize, summarize_pooled, DomainSummary, NodeRecord};
use crate::model::{LanguageModel, TokenId};
use crate::tree::{build_draft_tree, TreeParams};
use crate::verify::score_tree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemperatureMode {
    /// Commit the target argmax at every step.
    #[default]
    Greedy,
}

/// Run settings. Serialized as a flat key-value TOML document whose keys are
/// the field names; missing keys take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub max_depth: usize,
    pub max_branch: usize,
    pub root_top_k: usize,
    pub max_nodes: usize,
    pub max_new_tokens: usize,
    pub prompt_truncation: usize,
    pub temperature_mode: TemperatureMode,
    pub seed: u64,
    pub prompts_per_domain: usize,
    pub draft_order: usize,
    pub target_order: usize,
    pub smoothing: f64,
    /// Stop a prompt once the target commits `</s>`.
    pub early_stop: bool,
    pub tokenizer: Tokenizer,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        let tree = TreeParams::default();
        Self {
            max_depth: tree.max_depth,
            max_branch: tree.max_branch,
            root_top_k: tree.root_top_k,
            max_nodes: tree.max_nodes,
            max_new_tokens: 64,
            prompt_truncation: 512,
            temperature_mode: TemperatureMode::Greedy,
            seed: 42,
            prompts_per_domain: 50,
            draft_order: 2,
            target_order: 3,
            smoothing: 0.1,
            early_stop: true,
            tokenizer: Tokenizer::Whitespace,
        }
    }
}

impl GenerationConfig {
    pub fn tree_params(&self) -> TreeParams {
        TreeParams {
            max_depth: self.max_depth,
            max_branch: self.max_branch,
            root_top_k: self.root_top_k,
            max_nodes: self.max_nodes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.tree_params().validate()?;
        if self.max_new_tokens == 0 {
            return Err(Error::out_of_range("max_new_tokens", 0, ">= 1"));
        }
        if self.prompts_per_domain == 0 {
            return Err(Error::out_of_range("prompts_per_domain", 0, ">= 1"));
        }
        if self.prompt_truncation == 0 {
            return Err(Error::out_of_range("prompt_truncation", 0, ">= 1"));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Overrides one key, parsing `value` as it would appear in a config file.
    /// Bare words are accepted for string-valued keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut table = toml::Table::try_from(&*self).map_err(|e| Error::Parse(e.to_string()))?;
        if !table.contains_key(key) {
            return Err(Error::Parse(format!("unknown config key {key:?}")));
        }
        let mut parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        if let (Some(toml::Value::Float(_)), toml::Value::Integer(i)) = (table.get(key), &parsed) {
            parsed = toml::Value::Float(*i as f64);
        }
        table.insert(key.to_string(), parsed);
        *self = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Parse(format!("{key}: {e}")))?;
        self.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Where a generation step sits in the experiment.
#[derive(Debug, Clone, Copy)]
pub struct StepTag<'a> {
    pub domain: &'a str,
    pub prompt_id: usize,
    pub step_index: usize,
    pub max_new_tokens: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    /// One record per tree node, in node order.
    pub records: Vec<NodeRecord>,
    /// Target argmax at the context; the caller appends it.
    pub committed: TokenId,
}

/// Builds one draft tree, scores it with the target, and records every node.
pub fn generate_step<D, T>(
    draft: &D,
    target: &T,
    context: &[TokenId],
    params: &TreeParams,
    tag: StepTag<'_>,
) -> Result<StepOutput>
where
    D: LanguageModel + ?Sized,
    T: LanguageModel + ?Sized,
{
    let tree = build_draft_tree(draft, context, params)?;
    let scored = score_tree(target, context, &tree)?;
    let bin = position_bin(tag.step_index, tag.max_new_tokens);
    let records = tree
        .nodes
        .iter()
        .zip(&scored.scores)
        .map(|(node, s)| NodeRecord {
            domain: tag.domain.to_string(),
            prompt_id: tag.prompt_id,
            step_index: tag.step_index,
            depth: node.depth,
            position_bin: bin,
            token: node.token,
            p_draft: node.p_draft,
            p_target: s.p_target,
            alpha: s.alpha,
            target_entropy: s.target_entropy,
        })
        .collect();
    Ok(StepOutput {
        records,
        committed: scored.bonus,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config_hash: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub domains: usize,
    pub prompts: usize,
    /// Generation steps whose tree was recorded.
    pub steps: usize,
    /// Prompts halted by `</s>` before the token cap.
    pub early_stops: usize,
    /// Sum of recorded tree sizes; equals the record count.
    pub tree_nodes: usize,
    pub vocab_size: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config: GenerationConfig,
    pub records: Vec<NodeRecord>,
    pub summaries: BTreeMap<String, DomainSummary>,
    pub pooled: Option<DomainSummary>,
    pub prompt_sets: Vec<PromptSet>,
    pub metadata: RunMetadata,
}

struct PromptRun {
    records: Vec<NodeRecord>,
    steps: usize,
    tree_nodes: usize,
    stopped: bool,
}

fn run_prompt<D, T>(
    draft: &D,
    target: &T,
    config: &GenerationConfig,
    domain: &str,
    prompt_id: usize,
    prompt: &[TokenId],
) -> Result<PromptRun>
where
    D: LanguageModel + ?Sized,
    T: LanguageModel + ?Sized,
{
    let params = config.tree_params();
    let mut context = prompt.to_vec();
    let mut run = PromptRun {
        records: Vec::with_capacity(config.max_new_tokens * params.max_nodes),
        steps: 0,
        tree_nodes: 0,
        stopped: false,
    };
    if context.is_empty() {
        return Ok(run);
    }
    for step_index in 0..config.max_new_tokens {
        let tag = StepTag {
            domain,
            prompt_id,
            step_index,
            max_new_tokens: config.max_new_tokens,
        };
        let out = generate_step(draft, target, &context, &params, tag)?;
        // the step that commits the stop token contributes no tree
        if config.early_stop && out.committed == EOS {
            run.stopped = true;
            break;
        }
        run.steps += 1;
        run.tree_nodes += out.records.len();
        run.records.extend(out.records);
        context.push(out.committed);
    }
    Ok(run)
}

#[cfg(feature = "parallel")]
fn run_prompts<D, T>(
    draft: &D,
    target: &T,
    config: &GenerationConfig,
    set: &PromptSet,
) -> Result<Vec<PromptRun>>
where
    D: LanguageModel + ?Sized,
    T: LanguageModel + ?Sized,
{
    use rayon::prelude::*;
    // collect preserves prompt order, so the merge is deterministic
    set.prompts
        .par_iter()
        .map(|p| run_prompt(draft, target, config, &set.domain, p.prompt_id, &p.tokens))
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn run_prompts<D, T>(
    draft: &D,
    target: &T,
    config: &GenerationConfig,
    set: &PromptSet,
) -> Result<Vec<PromptRun>>
where
    D: LanguageModel + ?Sized,
    T: LanguageModel + ?Sized,
{
    set.prompts
        .iter()
        .map(|p| run_prompt(draft, target, config, &set.domain, p.prompt_id, &p.tokens))
        .collect()
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Trains the surrogate pair on `corpora` and runs the full experiment.
pub fn run_experiment(config: &GenerationConfig, corpora: &[DomainCorpus]) -> Result<ExperimentReport> {
    config.validate()?;
    if corpora.is_empty() {
        return Err(Error::Empty("no domain corpora"));
    }
    let (draft, target) = train_models(
        corpora,
        config.draft_order,
        config.target_order,
        config.smoothing,
    )?;
    run_experiment_with(config, corpora, &draft, &target)
}

/// Runs the experiment with caller-supplied models.
pub fn run_experiment_with<D, T>(
    config: &GenerationConfig,
    corpora: &[DomainCorpus],
    draft: &D,
    target: &T,
) -> Result<ExperimentReport>
where
    D: LanguageModel + ?Sized,
    T: LanguageModel + ?Sized,
{
    config.validate()?;
    if corpora.is_empty() {
        return Err(Error::Empty("no domain corpora"));
    }
    if draft.vocab() != target.vocab() {
        return Err(Error::Vocabulary(
            "draft and target vocabularies differ".into(),
        ));
    }
    let started_unix = unix_now();
    let mut records = Vec::new();
    let mut prompt_sets = Vec::with_capacity(corpora.len());
    let (mut steps, mut tree_nodes, mut early_stops, mut prompts) = (0, 0, 0, 0);
    for corpus in corpora {
        let set = sample_prompts(
            corpus,
            config.prompts_per_domain,
            config.seed,
            config.prompt_truncation,
        )?;
        for run in run_prompts(draft, target, config, &set)? {
            steps += run.steps;
            tree_nodes += run.tree_nodes;
            early_stops += usize::from(run.stopped);
            records.extend(run.records);
        }
        prompts += set.prompts.len();
        prompt_sets.push(set);
    }
    let summaries = summarize(&records)?;
    let pooled = summarize_pooled(&records)?;
    Ok(ExperimentReport {
        metadata: RunMetadata {
            config_hash: config.hash(),
            started_unix,
            finished_unix: unix_now(),
            domains: corpora.len(),
            prompts,
            steps,
            early_stops,
            tree_nodes,
            vocab_size: draft.vocab().size(),
        },
        config: config.clone(),
        records,
        summaries,
        pooled,
        prompt_sets,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::corpus::{build_corpora, synthetic_corpora};
    use crate::model::{FixedModel, ProbDist, Vocabulary};

    #[test]
    fn defaults_are_the_documented_values() {
        let c = GenerationConfig::default();
        assert_eq!(
            (c.max_depth, c.max_branch, c.root_top_k, c.max_nodes),
            (3, 2, 3, 8)
        );
        assert_eq!(c.max_new_tokens, 64);
        assert_eq!(c.prompt_truncation, 512);
        assert_eq!(c.seed, 42);
        assert_eq!(c.prompts_per_domain, 50);
        assert_eq!(c.temperature_mode, TemperatureMode::Greedy);
    }

    #[test]
    fn config_file_round_trip_and_overrides() {
        let c = GenerationConfig::from_toml_str("seed = 7\nmax_depth = 2\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.max_depth, 2);
        assert_eq!(c.max_nodes, 8);
        assert_eq!(GenerationConfig::from_toml_str(&c.to_toml()).unwrap(), c);
        assert!(GenerationConfig::from_toml_str("bogus = 1").is_err());
        assert!(GenerationConfig::from_toml_str("temperature_mode = \"hot\"").is_err());

        let mut c = GenerationConfig::default();
        c.set("smoothing", "1").unwrap();
        assert_eq!(c.smoothing, 1.0);
        c.set("smoothing", "0.5").unwrap();
        c.set("tokenizer", "character").unwrap();
        c.set("early_stop", "false").unwrap();
        assert_eq!(c.smoothing, 0.5);
        assert_eq!(c.tokenizer, Tokenizer::Character);
        assert!(!c.early_stop);
        assert!(c.set("max_nodes", "1").is_err());
        assert!(c.set("nope", "1").is_err());
        assert_ne!(c.hash(), GenerationConfig::default().hash());
    }

    #[test]
    fn identical_models_accept_everything() {
        let v = Arc::new(Vocabulary::new(["a", "b", "c", "d", "e"]).unwrap());
        let d = ProbDist::new(vec![0.1, 0.4, 0.2, 0.2, 0.1]).unwrap();
        let m = FixedModel::new(v, d).unwrap();
        let tag = StepTag {
            domain: "x",
            prompt_id: 0,
            step_index: 40,
            max_new_tokens: 64,
        };
        let out = generate_step(&m, &m, &[TokenId(0)], &TreeParams::default(), tag).unwrap();
        assert_eq!(out.records.len(), 8);
        assert!(out.records.iter().all(|r| r.alpha == 1.0 && r.position_bin == 1));
        assert_eq!(out.committed, TokenId(1));
    }

    #[test]
    fn four_token_single_prompt_run() {
        let raw = synthetic_corpora(5, 1);
        let corpora = build_corpora(&raw[..1], Tokenizer::Whitespace).unwrap();
        let config = GenerationConfig {
            prompts_per_domain: 1,
            max_new_tokens: 4,
            early_stop: false,
            ..GenerationConfig::default()
        };
        let report = run_experiment(&config, &corpora).unwrap();
        assert_eq!(report.records.len(), 32);
        assert_eq!(report.metadata.tree_nodes, 32);
        assert_eq!(report.metadata.steps, 4);
        let steps: Vec<usize> = report.records.iter().map(|r| r.step_index).collect();
        assert!(steps.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn empty_corpora_rejected() {
        assert!(run_experiment(&GenerationConfig::default(), &[]).is_err());
    }
}
