use serde::{Deserialize, Serialize};

use super::{ConversationAct, KamError, LogicalRelation, RelationKind};
use crate::conversation::Utterance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub messages: Vec<Message>,
}

impl PromptText {
    pub fn user(content: String) -> Self {
        PromptText {
            messages: vec![Message {
                role: Role::User,
                content,
            }],
        }
    }

    pub fn with_followup(&self, content: &str) -> Self {
        let mut p = self.clone();
        p.messages.push(Message {
            role: Role::User,
            content: content.to_string(),
        });
        p
    }

    /// All message contents joined by newlines.
    pub fn flatten(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

fn position_label(pos: usize) -> String {
    if pos == 1 {
        "Post".to_string()
    } else {
        format!("Comment {}", pos - 1)
    }
}

/// `Post: ...` followed by `Comment k: ...` lines in chain order.
pub fn render_chain(chain: &[Utterance]) -> Result<String, KamError> {
    if chain.is_empty() {
        return Err(KamError::EmptyChain);
    }
    Ok(chain
        .iter()
        .enumerate()
        .map(|(k, u)| format!("{}: {}", position_label(k + 1), u.text))
        .collect::<Vec<_>>()
        .join("\n"))
}

/// Labels of the focal utterance `i` and its parent `i - 1`, as they appear in
/// the rendered chain.
pub fn focal_labels(i: usize) -> (String, String) {
    (position_label(i), position_label(i - 1))
}

fn label_list(kind: RelationKind) -> String {
    let names: Vec<&str> = match kind {
        RelationKind::Logical => LogicalRelation::LABELS.iter().map(|r| r.as_str()).collect(),
        RelationKind::Act => ConversationAct::LABELS.iter().map(|a| a.as_str()).collect(),
    };
    let capitalized: Vec<String> = names.iter().map(|n| n[..1].to_uppercase() + &n[1..]).collect();
    format!("[{}]", capitalized.join(", "))
}

/// Zero-shot prompt asking for the relation of chain position `i` (1-based)
/// to position `i - 1`. The thread shown is the chain up to and including
/// position `i`.
pub fn build_prompt(chain: &[Utterance], i: usize, kind: RelationKind) -> Result<PromptText, KamError> {
    if i < 2 || i > chain.len() {
        return Err(KamError::Index {
            index: i,
            len: chain.len(),
        });
    }
    let thread = render_chain(&chain[..i])?;
    let (focal, parent) = focal_labels(i);
    let what = match kind {
        RelationKind::Logical => "logical relation",
        RelationKind::Act => "conversation act",
    };
    let content = format!(
        "The following are conversation threads, where \"Post\" content is considered a post on social media. \
Each comment is a reply to the preceding comment, and all comments are responses to the original post.\n\
{thread}\n\
Please analyze the relations between each post and comment, as well as between each comment. \
Determine the {what} between {focal} and {parent}, selecting from {labels}.",
        labels = label_list(kind),
    );
    Ok(PromptText::user(content))
}
