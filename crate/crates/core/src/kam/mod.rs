//! Knowledge acquisition: prompt a chat model for the logical relation and the
//! conversation act of every adjacent pair in a reply chain, with a
//! persistent response cache.

mod annotate;
mod cache;
mod parse;
mod prompt;
mod provider;

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::conversation::Utterance;

pub use annotate::{AnnotateStats, Annotator};
pub use cache::{AnnotationCache, CacheRecord};
pub use parse::{parse_relation, try_parse_relation};
pub use prompt::{build_prompt, focal_labels, render_chain, Message, PromptText, Role};
pub use provider::{CountingProvider, HttpProvider, Provider, ProviderConfig, StubProvider, NEGATION_CUES};

#[derive(Debug, Error)]
pub enum KamError {
    #[error("pair index {index} out of range for a chain of length {len} (need 2 <= i <= n)")]
    Index { index: usize, len: usize },
    #[error("empty chain")]
    EmptyChain,
    #[error("provider error: {0}")]
    Provider(String),
    #[error("no provider configured and {missing} queries are not cached")]
    ProviderUnavailable { missing: usize },
    #[error("cache error: {0}")]
    Cache(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationKind {
    Logical,
    Act,
}

impl RelationKind {
    pub const BOTH: [RelationKind; 2] = [RelationKind::Logical, RelationKind::Act];

    pub fn as_str(self) -> &'static str {
        match self {
            RelationKind::Logical => "logical",
            RelationKind::Act => "act",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogicalRelation {
    Contrastive,
    Succession,
    Causal,
    Summary,
    /// Parse-failure fallback only.
    Unknown,
}

impl LogicalRelation {
    /// The four relations offered to the model.
    pub const LABELS: [LogicalRelation; 4] = [
        LogicalRelation::Contrastive,
        LogicalRelation::Succession,
        LogicalRelation::Causal,
        LogicalRelation::Summary,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LogicalRelation::Contrastive => "contrastive",
            LogicalRelation::Succession => "succession",
            LogicalRelation::Causal => "causal",
            LogicalRelation::Summary => "summary",
            LogicalRelation::Unknown => "unknown",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConversationAct {
    Summarize,
    Suggestion,
    Disagreement,
    Agreement,
    Refusal,
    Question,
    Clarification,
    Other,
}

impl ConversationAct {
    pub const LABELS: [ConversationAct; 8] = [
        ConversationAct::Summarize,
        ConversationAct::Suggestion,
        ConversationAct::Disagreement,
        ConversationAct::Agreement,
        ConversationAct::Refusal,
        ConversationAct::Question,
        ConversationAct::Clarification,
        ConversationAct::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConversationAct::Summarize => "summarize",
            ConversationAct::Suggestion => "suggestion",
            ConversationAct::Disagreement => "disagreement",
            ConversationAct::Agreement => "agreement",
            ConversationAct::Refusal => "refusal",
            ConversationAct::Question => "question",
            ConversationAct::Clarification => "clarification",
            ConversationAct::Other => "other",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// A parsed reply of either kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relation {
    Logical(LogicalRelation),
    Act(ConversationAct),
}

impl Relation {
    pub fn kind(self) -> RelationKind {
        match self {
            Relation::Logical(_) => RelationKind::Logical,
            Relation::Act(_) => RelationKind::Act,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Logical(r) => r.as_str(),
            Relation::Act(a) => a.as_str(),
        }
    }

    pub fn fallback(kind: RelationKind) -> Relation {
        match kind {
            RelationKind::Logical => Relation::Logical(LogicalRelation::Unknown),
            RelationKind::Act => Relation::Act(ConversationAct::Other),
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Relations of chain position `index` (1-based, >= 2) relative to `index - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairAnnotation {
    pub index: usize,
    pub logical: Option<LogicalRelation>,
    pub act: Option<ConversationAct>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationAnnotations {
    pub chain_key: String,
    /// One entry per i in 2..=n, in order.
    pub pairs: Vec<PairAnnotation>,
    pub provider_id: String,
}

impl RelationAnnotations {
    pub fn chain_len(&self) -> usize {
        self.pairs.len() + 1
    }

    pub fn has_kind(&self, kind: RelationKind) -> bool {
        self.pairs.iter().all(|p| match kind {
            RelationKind::Logical => p.logical.is_some(),
            RelationKind::Act => p.act.is_some(),
        })
    }
}

/// Content hash of the chain texts.
pub fn chain_key(chain: &[Utterance]) -> String {
    let mut h = Sha256::new();
    for u in chain {
        h.update((u.text.len() as u64).to_le_bytes());
        h.update(u.text.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Number of prompts a cold run issues for the given chain lengths.
pub fn prompt_count(chain_lengths: impl IntoIterator<Item = usize>, kinds: usize) -> usize {
    chain_lengths.into_iter().map(|n| kinds * n.saturating_sub(1)).sum()
}
