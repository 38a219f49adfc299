//! Corpus JSON reading and writing.
//!
//! Layout: `{task, taxonomy: {intents: [{name, category}], slots: [..]},
//! dialogs: [{id, private_info, turns: [{speaker, sentences: [{text, intent, slot}]}]}]}`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use super::dialog::{AnnotatedDialog, Corpus, Turn};
use super::lexicon::SlotLexicon;
use super::taxonomy::{IntentCategory, IntentLabel, Taxonomy};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LoadMode {
    /// Every label must exist in the supplied taxonomy.
    #[default]
    Strict,
    /// Unknown labels are admitted (with a warning) and appended to the
    /// taxonomy of the returned corpus.
    Lenient,
}

#[derive(Debug, Serialize, Deserialize)]
struct FileTaxonomy {
    intents: Vec<IntentLabel>,
    slots: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusFile {
    task: String,
    taxonomy: FileTaxonomy,
    dialogs: Vec<DialogRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DialogRecord {
    id: String,
    private_info: BTreeMap<String, String>,
    turns: Vec<Turn>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    outcome: BTreeMap<String, serde_json::Value>,
}

pub fn load_corpus(path: impl AsRef<Path>, taxonomy: &Taxonomy, mode: LoadMode) -> Result<Corpus> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let corpus = parse_corpus(&raw, taxonomy, mode)?;
    let stats = corpus.stats();
    info!(
        path = %path.display(),
        dialogs = stats.dialogs,
        turns = stats.turns,
        sentences = stats.sentences,
        "loaded corpus"
    );
    Ok(corpus)
}

pub fn parse_corpus(raw: &str, taxonomy: &Taxonomy, mode: LoadMode) -> Result<Corpus> {
    let file: CorpusFile = serde_json::from_str(raw).map_err(|e| Error::json("corpus", e))?;
    let mut taxonomy = taxonomy.clone();
    let mut dialogs = Vec::with_capacity(file.dialogs.len());
    for record in file.dialogs {
        let private_info = SlotLexicon::new(record.private_info)
            .map_err(|e| invalid(&record.id, e.to_string()))?;
        let dialog = AnnotatedDialog {
            id: record.id,
            private_info,
            turns: record.turns,
            outcome: record.outcome,
        };
        check_structure(&dialog)?;
        check_labels(&dialog, &mut taxonomy, &file.taxonomy, mode)?;
        dialogs.push(dialog);
    }
    Ok(Corpus {
        task: file.task,
        taxonomy,
        dialogs,
    })
}

pub fn corpus_to_json(corpus: &Corpus) -> Result<String> {
    let file = CorpusFile {
        task: corpus.task.clone(),
        taxonomy: FileTaxonomy {
            intents: corpus.taxonomy.intents.clone(),
            slots: corpus.taxonomy.slots.clone(),
        },
        dialogs: corpus
            .dialogs
            .iter()
            .map(|d| DialogRecord {
                id: d.id.clone(),
                private_info: d.private_info.entries().clone(),
                turns: d.turns.clone(),
                outcome: d.outcome.clone(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).map_err(|e| Error::json("corpus", e))
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = corpus_to_json(corpus)?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

fn invalid(dialog: &str, reason: impl Into<String>) -> Error {
    Error::InvalidDialog {
        dialog: dialog.to_string(),
        reason: reason.into(),
    }
}

fn check_structure(dialog: &AnnotatedDialog) -> Result<()> {
    if dialog.turns.is_empty() {
        return Err(invalid(&dialog.id, "dialog has no turns"));
    }
    for (i, turn) in dialog.turns.iter().enumerate() {
        if turn.sentences.is_empty() {
            return Err(invalid(&dialog.id, format!("turn {i} has no sentences")));
        }
        if i > 0 && dialog.turns[i - 1].speaker == turn.speaker {
            return Err(invalid(
                &dialog.id,
                format!("turns {} and {i} are both by {}", i - 1, turn.speaker.as_str()),
            ));
        }
    }
    Ok(())
}

fn check_labels(
    dialog: &AnnotatedDialog,
    taxonomy: &mut Taxonomy,
    declared: &FileTaxonomy,
    mode: LoadMode,
) -> Result<()> {
    for sentence in dialog.turns.iter().flat_map(|t| &t.sentences) {
        if taxonomy.intent_index(&sentence.intent).is_none() {
            if mode == LoadMode::Strict {
                return Err(Error::UnknownLabel {
                    dialog: dialog.id.clone(),
                    kind: "intent",
                    label: sentence.intent.clone(),
                });
            }
            let category = declared
                .intents
                .iter()
                .find(|i| i.name == sentence.intent)
                .map(|i| i.category)
                .unwrap_or(IntentCategory::OffTaskGeneral);
            warn!(dialog = %dialog.id, label = %sentence.intent, "admitting unknown intent");
            taxonomy
                .intents
                .push(IntentLabel::new(sentence.intent.clone(), category));
        }
        if taxonomy.slot_index(&sentence.slot).is_none() {
            if mode == LoadMode::Strict {
                return Err(Error::UnknownLabel {
                    dialog: dialog.id.clone(),
                    kind: "slot",
                    label: sentence.slot.clone(),
                });
            }
            warn!(dialog = %dialog.id, label = %sentence.slot, "admitting unknown slot");
            taxonomy.slots.push(sentence.slot.clone());
        }
    }
    Ok(())
}
