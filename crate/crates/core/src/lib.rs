//! Tree-based speculative decoding with per-node acceptance analytics.
//!
//! A draft model grows a small tree of candidate continuations at each
//! generation step; a target model scores every node in one batched pass.
//! Each node's acceptance probability `min(1, p_target / p_draft)` and the
//! target's entropy at that position are recorded, and the records are
//! aggregated into per-domain acceptance statistics: mean and spread of
//! acceptance, depth and position profiles, fully-accepted chain
//! probabilities, expected accepted length and the entropy/acceptance rank
//! correlation.
//!
//! The bundled models are additive-smoothed n-gram count models over a
//! shared vocabulary, with the draft one order below the target.

pub mod corpus;
pub mod error;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod report;
pub mod runner;
pub mod selftest;
pub mod tree;
pub mod verify;

pub use error::{Error, Result};
pub use metrics::{DomainSummary, NodeRecord};
pub use model::{LanguageModel, NGramModel, ProbDist, TokenId, Vocabulary};
pub use runner::{ExperimentReport, GenerationConfig};
pub use tree::{DraftTree, TreeParams};
