use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::lexicon::SlotLexicon;
use super::taxonomy::Taxonomy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Human,
    System,
}

impl Speaker {
    pub fn other(self) -> Speaker {
        match self {
            Speaker::Human => Speaker::System,
            Speaker::System => Speaker::Human,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Speaker::Human => "human",
            Speaker::System => "system",
        }
    }
}

/// One annotated sentence. Labels are taxonomy names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    pub intent: String,
    pub slot: String,
}

impl Sentence {
    pub fn new(text: impl Into<String>, intent: impl Into<String>, slot: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            intent: intent.into(),
            slot: slot.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub sentences: Vec<Sentence>,
}

impl Turn {
    pub fn new(speaker: Speaker, sentences: Vec<Sentence>) -> Self {
        Self { speaker, sentences }
    }

    pub fn text(&self) -> String {
        self.sentences
            .iter()
            .map(|s| s.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn first_intent(&self) -> Option<&str> {
        self.sentences.first().map(|s| s.intent.as_str())
    }

    pub fn first_slot(&self) -> Option<&str> {
        self.sentences.first().map(|s| s.slot.as_str())
    }

    pub fn last_intent(&self) -> Option<&str> {
        self.sentences.last().map(|s| s.intent.as_str())
    }

    pub fn last_slot(&self) -> Option<&str> {
        self.sentences.last().map(|s| s.slot.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedDialog {
    pub id: String,
    pub private_info: SlotLexicon,
    pub turns: Vec<Turn>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub outcome: BTreeMap<String, serde_json::Value>,
}

impl AnnotatedDialog {
    pub fn sentence_count(&self) -> usize {
        self.turns.iter().map(|t| t.sentences.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CorpusStats {
    pub dialogs: usize,
    pub turns: usize,
    pub sentences: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub task: String,
    pub taxonomy: Taxonomy,
    pub dialogs: Vec<AnnotatedDialog>,
}

impl Corpus {
    pub fn new(taxonomy: Taxonomy, dialogs: Vec<AnnotatedDialog>) -> Self {
        Self {
            task: taxonomy.task.clone(),
            taxonomy,
            dialogs,
        }
    }

    pub fn stats(&self) -> CorpusStats {
        CorpusStats {
            dialogs: self.dialogs.len(),
            turns: self.dialogs.iter().map(|d| d.turns.len()).sum(),
            sentences: self.dialogs.iter().map(|d| d.sentence_count()).sum(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.dialogs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.dialogs.len()
    }

    /// Same taxonomy, a subset of dialogs.
    pub fn with_dialogs(&self, dialogs: Vec<AnnotatedDialog>) -> Corpus {
        Corpus {
            task: self.task.clone(),
            taxonomy: self.taxonomy.clone(),
            dialogs,
        }
    }
}
