//! JSON bodies of the chat service.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::SlotLexicon;
use crate::filter::DialogState;
use crate::pipeline::Variant;
use crate::session::{Message, Ratings, Session, SessionStats, TurnTrace, VariantAggregate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    /// Defaults to the served task.
    #[serde(default)]
    pub task: Option<String>,
    pub variant: Variant,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub blind: bool,
    /// Overrides the configured persona.
    #[serde(default)]
    pub lexicon: Option<SlotLexicon>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub task: String,
    pub variant: Variant,
    pub seed: u64,
    pub blind: bool,
    pub lexicon: SlotLexicon,
    pub state: DialogState,
    pub transcript: Vec<Message>,
    pub ratings: Option<Ratings>,
    pub stats: SessionStats,
}

impl From<&Session> for SessionView {
    fn from(s: &Session) -> Self {
        Self {
            id: s.id.clone(),
            task: s.task.clone(),
            variant: s.variant,
            seed: s.seed,
            blind: s.blind,
            lexicon: s.lexicon.clone(),
            state: s.state.clone(),
            transcript: s.transcript.clone(),
            ratings: s.ratings,
            stats: s.stats(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostMessage {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageReply {
    pub reply: String,
    /// Always present; clients hide it when `blind` is set.
    pub trace: TurnTrace,
    pub blind: bool,
    pub stats: SessionStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingReply {
    pub ratings: Ratings,
    pub stats: SessionStats,
    pub aggregate: VariantAggregate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantList {
    pub task: String,
    pub variants: Vec<Variant>,
}

pub type Aggregate = BTreeMap<String, VariantAggregate>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
