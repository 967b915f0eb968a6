//! Per-domain corpora: tokenization, the shared vocabulary, seeded prompt
//! sampling, model training, and bundled synthetic domains for smoke runs.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{NGramModel, TokenId, Vocabulary};

pub const UNK: TokenId = TokenId(0);
pub const EOS: TokenId = TokenId(1);
pub const UNK_TOKEN: &str = "<unk>";
pub const EOS_TOKEN: &str = "</s>";

/// The four domains bundled with the synthetic generator.
pub const DOMAINS: [&str; 4] = ["chat", "code", "math", "reasoning"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tokenizer {
    #[default]
    Whitespace,
    Character,
}

impl FromStr for Tokenizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whitespace" => Ok(Tokenizer::Whitespace),
            "character" => Ok(Tokenizer::Character),
            _ => Err(Error::Parse(format!(
                "unknown tokenizer {s:?} (expected whitespace or character)"
            ))),
        }
    }
}

pub fn tokenize(text: &str, scheme: Tokenizer) -> Vec<String> {
    match scheme {
        Tokenizer::Whitespace => text.split_whitespace().map(str::to_owned).collect(),
        Tokenizer::Character => text.chars().map(String::from).collect(),
    }
}

pub fn detokenize<S: AsRef<str>>(tokens: &[S], scheme: Tokenizer) -> String {
    let sep = match scheme {
        Tokenizer::Whitespace => " ",
        Tokenizer::Character => "",
    };
    tokens
        .iter()
        .map(AsRef::as_ref)
        .collect::<Vec<_>>()
        .join(sep)
}

/// Builds the shared vocabulary: `<unk>` at 0, `</s>` at 1, then every
/// remaining token in sorted order.
pub fn build_vocabulary<'a, I>(tokens: I) -> Vocabulary
where
    I: IntoIterator<Item = &'a str>,
{
    let mut seen: Vec<&str> = tokens
        .into_iter()
        .filter(|t| *t != UNK_TOKEN && *t != EOS_TOKEN)
        .collect();
    seen.sort_unstable();
    seen.dedup();
    let all = [UNK_TOKEN, EOS_TOKEN].into_iter().chain(seen);
    Vocabulary::new(all).expect("reserved tokens make the vocabulary valid")
}

/// Maps tokens to ids, sending out-of-vocabulary tokens to `<unk>`.
pub fn encode<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> Vec<TokenId> {
    tokens
        .iter()
        .map(|t| vocab.id(t.as_ref()).unwrap_or(UNK))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainCorpus {
    pub domain: String,
    pub documents: Vec<Vec<TokenId>>,
    pub vocab: Arc<Vocabulary>,
}

/// Tokenizes raw per-domain documents against one shared vocabulary.
/// Documents that tokenize to nothing are dropped.
pub fn build_corpora(raw: &[(String, Vec<String>)], scheme: Tokenizer) -> Result<Vec<DomainCorpus>> {
    if raw.is_empty() {
        return Err(Error::Empty("no domain corpora"));
    }
    let tokenized: Vec<(String, Vec<Vec<String>>)> = raw
        .iter()
        .map(|(d, docs)| {
            let docs = docs
                .iter()
                .map(|t| tokenize(t, scheme))
                .filter(|t| !t.is_empty())
                .collect();
            (d.clone(), docs)
        })
        .collect();
    let vocab = Arc::new(build_vocabulary(
        tokenized
            .iter()
            .flat_map(|(_, docs)| docs.iter().flatten().map(String::as_str)),
    ));
    Ok(tokenized
        .into_iter()
        .map(|(domain, docs)| DomainCorpus {
            domain,
            documents: docs.iter().map(|d| encode(d, &vocab)).collect(),
            vocab: vocab.clone(),
        })
        .collect())
}

/// Reads `root/<domain>/<file>`: one directory per domain, one UTF-8
/// document per file. Domains and files are taken in sorted name order.
pub fn load_corpus_dir(root: &Path) -> Result<Vec<(String, Vec<String>)>> {
    let mut domains = Vec::new();
    for dir in sorted_entries(root)? {
        if !dir.is_dir() {
            continue;
        }
        let label = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Parse(format!("non UTF-8 directory name {}", dir.display())))?
            .to_string();
        let mut docs = Vec::new();
        for file in sorted_entries(&dir)? {
            if file.is_file() {
                docs.push(std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?);
            }
        }
        domains.push((label, docs));
    }
    if domains.is_empty() {
        return Err(Error::Empty("corpus directory has no domain subdirectories"));
    }
    Ok(domains)
}

fn sorted_entries(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut out = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub prompt_id: usize,
    /// Index of the source document in its corpus.
    pub source_doc: usize,
    pub tokens: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    pub domain: String,
    pub seed: u64,
    pub prompts: Vec<Prompt>,
}

#[derive(Serialize)]
struct ManifestLine<'a> {
    prompt_id: usize,
    domain: &'a str,
    token_count: usize,
    source_doc: usize,
}

impl PromptSet {
    /// JSON lines, one object per prompt.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        for p in &self.prompts {
            let line = ManifestLine {
                prompt_id: p.prompt_id,
                domain: &self.domain,
                token_count: p.tokens.len(),
                source_doc: p.source_doc,
            };
            let _ = writeln!(out, "{}", serde_json::to_string(&line).expect("plain struct"));
        }
        out
    }
}

/// Draws `n` prompts with a ChaCha8 generator seeded from `seed`: without
/// replacement when the corpus is large enough, with replacement otherwise.
/// Each prompt keeps its first `max_len` tokens.
pub fn sample_prompts(corpus: &DomainCorpus, n: usize, seed: u64, max_len: usize) -> Result<PromptSet> {
    if corpus.documents.is_empty() {
        return Err(Error::Empty("corpus has no documents"));
    }
    if n == 0 {
        return Err(Error::out_of_range("prompts", n, ">= 1"));
    }
    if max_len == 0 {
        return Err(Error::out_of_range("prompt_truncation", max_len, ">= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let docs = corpus.documents.len();
    let picks: Vec<usize> = if docs >= n {
        index::sample(&mut rng, docs, n).into_vec()
    } else {
        (0..n).map(|_| rng.random_range(0..docs)).collect()
    };
    let prompts = picks
        .into_iter()
        .enumerate()
        .map(|(prompt_id, source_doc)| {
            let doc = &corpus.documents[source_doc];
            Prompt {
                prompt_id,
                source_doc,
                tokens: doc[..doc.len().min(max_len)].to_vec(),
            }
        })
        .collect();
    Ok(PromptSet {
        domain: corpus.domain.clone(),
        seed,
        prompts,
    })
}

/// Trains the draft and target count models on every document of every
/// corpus, each followed by `</s>`.
pub fn train_models(
    corpora: &[DomainCorpus],
    draft_order: usize,
    target_order: usize,
    smoothing: f64,
) -> Result<(NGramModel, NGramModel)> {
    if draft_order < 1 {
        return Err(Error::out_of_range("draft_order", draft_order, ">= 1"));
    }
    if draft_order >= target_order {
        return Err(Error::out_of_range(
            "draft_order",
            draft_order,
            "< target_order",
        ));
    }
    let first = corpora.first().ok_or(Error::Empty("no corpora to train on"))?;
    if corpora.iter().any(|c| *c.vocab != *first.vocab) {
        return Err(Error::Vocabulary("corpora do not share a vocabulary".into()));
    }
    let vocab = first.vocab.clone();
    let mut draft = NGramModel::new(vocab.clone(), draft_order, smoothing)?;
    let mut target = NGramModel::new(vocab, target_order, smoothing)?;
    let mut seq = Vec::new();
    for doc in corpora.iter().flat_map(|c| &c.documents) {
        seq.clear();
        seq.extend_from_slice(doc);
        seq.push(EOS);
        draft.observe(&seq)?;
        target.observe(&seq)?;
    }
    Ok((draft, target))
}

struct DomainStyle {
    words: &'static [&'static str],
    terminator: &'static str,
    /// Successors per word in the generating chain.
    fanout: usize,
    /// Zipf exponent over successors; larger is more predictable.
    skew: f64,
    sentence_len: (usize, usize),
    /// Chance that a document ends after each sentence.
    end_prob: f64,
}

fn style(domain: &str) -> DomainStyle {
    match domain {
        "code" => DomainStyle {
            words: &[
                "def", "return", "if", "else", "for", "in", "range", "(", ")", ":", "=", "+",
                "-", "x", "y", "i", "n", "result", "list", "append", "len", "print", "while",
                "not", "and", "or", "[", "]", "0", "1", "self", "value",
            ],
            terminator: "\n",
            fanout: 3,
            skew: 1.6,
            sentence_len: (4, 9),
            end_prob: 0.06,
        },
        "math" => DomainStyle {
            words: &[
                "0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "+", "-", "*", "/", "=", "x",
                "y", "^", "(", ")", "solve", "for", "find", "the", "value", "of", "sqrt",
                "equals", "so", "therefore",
            ],
            terminator: ".",
            fanout: 7,
            skew: 0.7,
            sentence_len: (4, 10),
            end_prob: 0.16,
        },
        "reasoning" => DomainStyle {
            words: &[
                "if", "has", "apples", "each", "then", "total", "is", "she", "he", "buys",
                "sells", "more", "than", "how", "many", "left", "2", "3", "5", "10", "12",
                "times", "so", "the", "answer", "per", "day", "costs", "dollars",
            ],
            terminator: ".",
            fanout: 4,
            skew: 1.1,
            sentence_len: (5, 11),
            end_prob: 0.16,
        },
        _ => DomainStyle {
            words: &[
                "sure", "i", "you", "can", "help", "the", "a", "great", "question", "here",
                "is", "are", "some", "ideas", "to", "and", "it", "that", "would", "be",
                "happy", "let", "me", "know", "if", "this", "really", "thanks", "of", "for",
                "your", "well", "hope", "helps", "!", ",",
            ],
            terminator: ".",
            fanout: 6,
            skew: 1.3,
            sentence_len: (5, 12),
            end_prob: 0.18,
        },
    }
}

fn label_seed(label: &str) -> u64 {
    // FNV-1a; stable across platforms and releases
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

fn zipf_pick(rng: &mut ChaCha8Rng, options: &[usize], skew: f64) -> usize {
    let weights: Vec<f64> = (1..=options.len()).map(|r| (r as f64).powf(-skew)).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (o, w) in options.iter().zip(&weights) {
        if u < *w {
            return *o;
        }
        u -= w;
    }
    *options.last().expect("non-empty options")
}

/// Generates `n_docs` synthetic documents in the register of `domain`
/// (`chat`, `code`, `math`, `reasoning`; anything else uses the chat style).
///
/// Text is emitted by a seeded second-order chain over a small domain word
/// list whose successor sets and skew differ per domain, so a bigram draft
/// only approximates a trigram target and predictability varies by domain.
pub fn synthetic_documents(domain: &str, n_docs: usize, seed: u64) -> Vec<String> {
    let st = style(domain);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ label_seed(domain));
    let n = st.words.len();
    let fanout = st.fanout.min(n);
    // row `prev2 * n + prev1`; prev2 == n marks a sentence start
    let successors: Vec<Vec<usize>> = (0..(n + 1) * n)
        .map(|_| index::sample(&mut rng, n, fanout).into_vec())
        .collect();
    let starts = index::sample(&mut rng, n, fanout).into_vec();

    (0..n_docs)
        .map(|_| {
            let mut words: Vec<&str> = Vec::new();
            loop {
                let len = rng.random_range(st.sentence_len.0..=st.sentence_len.1);
                let (mut prev, mut w) = (n, zipf_pick(&mut rng, &starts, st.skew));
                for _ in 0..len {
                    words.push(st.words[w]);
                    let next = zipf_pick(&mut rng, &successors[prev * n + w], st.skew);
                    (prev, w) = (w, next);
                }
                words.push(st.terminator);
                if words.len() > 8 && rng.random::<f64>() < st.end_prob {
                    break;
                }
            }
            words
                .iter()
                .map(|w| if *w == "\n" { "<nl>" } else { w })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

/// Synthetic raw corpora for every bundled domain.
pub fn synthetic_corpora(docs_per_domain: usize, seed: u64) -> Vec<(String, Vec<String>)> {
    DOMAINS
        .iter()
        .map(|d| (d.to_string(), synthetic_documents(d, docs_per_domain, seed)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LanguageModel;

    fn corpus(docs: &[&str]) -> DomainCorpus {
        let raw = vec![(
            "d".to_string(),
            docs.iter().map(|s| s.to_string()).collect(),
        )];
        build_corpora(&raw, Tokenizer::Whitespace).unwrap().remove(0)
    }

    #[test]
    fn tokenizer_examples() {
        assert_eq!(tokenize("a b a", Tokenizer::Whitespace), vec!["a", "b", "a"]);
        assert_eq!(tokenize("ab", Tokenizer::Character), vec!["a", "b"]);
        assert!(tokenize("", Tokenizer::Whitespace).is_empty());
        let t = "x  y\tz";
        assert_eq!(tokenize(t, Tokenizer::Whitespace), tokenize(t, Tokenizer::Whitespace));
        let toks = tokenize("p q r", Tokenizer::Whitespace);
        assert_eq!(
            tokenize(&detokenize(&toks, Tokenizer::Whitespace), Tokenizer::Whitespace),
            toks
        );
        assert_eq!("character".parse::<Tokenizer>().unwrap(), Tokenizer::Character);
        assert!("bpe".parse::<Tokenizer>().is_err());
    }

    #[test]
    fn vocabulary_reserves_unk_and_eos() {
        let c = corpus(&["b a", "c </s> <unk>"]);
        assert_eq!(c.vocab.tokens(), &["<unk>", "</s>", "a", "b", "c"]);
        assert_eq!(encode(&["zzz", "a"], &c.vocab), vec![UNK, TokenId(2)]);
    }

    #[test]
    fn single_document_prompt() {
        let c = corpus(&["a b c d e"]);
        let p = sample_prompts(&c, 1, 42, 3).unwrap();
        assert_eq!(p.prompts.len(), 1);
        assert_eq!(p.prompts[0].tokens, c.documents[0][..3].to_vec());
        // fewer documents than prompts: sampled with replacement
        let p = sample_prompts(&c, 4, 42, 10).unwrap();
        assert!(p.prompts.iter().all(|q| q.source_doc == 0));
    }

    #[test]
    fn sampling_is_seeded() {
        let docs: Vec<String> = (0..30).map(|i| format!("w{i} x")).collect();
        let refs: Vec<&str> = docs.iter().map(String::as_str).collect();
        let c = corpus(&refs);
        let a = sample_prompts(&c, 10, 42, 512).unwrap();
        assert_eq!(a, sample_prompts(&c, 10, 42, 512).unwrap());
        assert_eq!(a.manifest(), sample_prompts(&c, 10, 42, 512).unwrap().manifest());
        assert_ne!(a, sample_prompts(&c, 10, 43, 512).unwrap());
        let mut ids: Vec<usize> = a.prompts.iter().map(|p| p.source_doc).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 10);
    }

    #[test]
    fn sampling_errors() {
        let mut c = corpus(&["a"]);
        assert!(sample_prompts(&c, 0, 1, 5).is_err());
        c.documents.clear();
        assert!(matches!(sample_prompts(&c, 1, 1, 5), Err(Error::Empty(_))));
    }

    #[test]
    fn trained_pair_matches_hand_counts() {
        // "a b a b" + </s>: unigram counts a=2 b=2 </s>=1
        let c = corpus(&["a b a b"]);
        let (draft, target) = train_models(std::slice::from_ref(&c), 1, 2, 0.0).unwrap();
        let a = c.vocab.id("a").unwrap();
        let b = c.vocab.id("b").unwrap();
        let d = draft.next_token_dist(&[a]).unwrap();
        assert_eq!(d.probs(), &[0.0, 0.2, 0.4, 0.4]);
        let t = target.next_token_dist(&[a]).unwrap();
        assert_eq!(t.prob(b), 1.0);
        let t = target.next_token_dist(&[b]).unwrap();
        assert_eq!(t.prob(a), 0.5);
        assert_eq!(t.prob(EOS), 0.5);
        assert_eq!(draft.vocab(), target.vocab());
    }

    #[test]
    fn train_rejects_bad_orders() {
        let c = corpus(&["a b"]);
        assert!(train_models(std::slice::from_ref(&c), 2, 2, 0.1).is_err());
        assert!(train_models(std::slice::from_ref(&c), 0, 2, 0.1).is_err());
        assert!(train_models(&[], 1, 2, 0.1).is_err());
    }

    #[test]
    fn synthetic_corpora_are_deterministic_and_distinct() {
        let a = synthetic_corpora(20, 42);
        assert_eq!(a, synthetic_corpora(20, 42));
        assert_eq!(a.len(), 4);
        assert_ne!(a[0].1, a[1].1);
        assert!(a.iter().all(|(_, docs)| docs.iter().all(|d| !d.is_empty())));
    }

    #[test]
    fn corpus_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for (d, docs) in [("math", ["1 + 1", "2 = 2"]), ("chat", ["hi there", "ok"])] {
            std::fs::create_dir(dir.path().join(d)).unwrap();
            for (i, text) in docs.iter().enumerate() {
                std::fs::write(dir.path().join(d).join(format!("{i}.txt")), text).unwrap();
            }
        }
        let raw = load_corpus_dir(dir.path()).unwrap();
        assert_eq!(raw[0].0, "chat");
        assert_eq!(raw[1].1, vec!["1 + 1", "2 = 2"]);
        assert!(load_corpus_dir(&dir.path().join("missing")).unwrap_err().is_io());
    }
}
