//! Ingestion of persuasion dialogs annotated with their original dialog acts.
//!
//! The persuader plays the system and the persuadee the human. Original act
//! names are mapped onto the shared intent taxonomy with a static table; a
//! key may be prefixed by `er:`/`ee:` when the mapping depends on the role.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::dialog::{AnnotatedDialog, Corpus, Sentence, Speaker, Turn};
use super::taxonomy::{Taxonomy, OTHERS_SLOT};
use crate::error::{Error, Result};

const DEFAULT_MAPPING: &str = include_str!("../../../../data/persuasion_act_map.json");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActMapping {
    table: BTreeMap<String, String>,
}

impl ActMapping {
    pub fn shipped() -> Self {
        Self::from_json(DEFAULT_MAPPING).expect("shipped act mapping parses")
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        let table = serde_json::from_str(raw).map_err(|e| Error::json("act mapping", e))?;
        Ok(Self { table })
    }

    pub fn map(&self, role: Speaker, act: &str) -> Option<&str> {
        let prefix = match role {
            Speaker::System => "er",
            Speaker::Human => "ee",
        };
        let act = act.trim().to_lowercase();
        self.table
            .get(&format!("{prefix}:{act}"))
            .or_else(|| self.table.get(&act))
            .map(String::as_str)
    }

    /// Every target intent must exist in `taxonomy`.
    pub fn validate(&self, taxonomy: &Taxonomy) -> Result<()> {
        for (act, intent) in &self.table {
            if taxonomy.intent_index(intent).is_none() {
                return Err(Error::InvalidTaxonomy(format!(
                    "act `{act}` maps to unknown intent `{intent}`"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct ActRow {
    dialog_id: String,
    role: String,
    text: String,
    act: String,
}

/// Reads a CSV with columns `dialog_id,turn,role,text,act` (one sentence per
/// row, role `er` or `ee`). Consecutive rows by the same role form a turn.
pub fn ingest_persuasion_csv(path: impl AsRef<Path>, mapping: &ActMapping) -> Result<Corpus> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_persuasion_reader(file, mapping)
}

pub fn ingest_persuasion_reader(reader: impl std::io::Read, mapping: &ActMapping) -> Result<Corpus> {
    let taxonomy = Taxonomy::persuasion();
    mapping.validate(&taxonomy)?;
    let mut dialogs: Vec<AnnotatedDialog> = Vec::new();
    let mut csv = csv::Reader::from_reader(reader);
    for row in csv.deserialize::<ActRow>() {
        let row = row.map_err(|e| Error::InvalidDialog {
            dialog: "<csv>".into(),
            reason: e.to_string(),
        })?;
        let speaker = match row.role.trim() {
            "er" | "persuader" => Speaker::System,
            "ee" | "persuadee" => Speaker::Human,
            other => {
                return Err(Error::InvalidDialog {
                    dialog: row.dialog_id,
                    reason: format!("unknown role `{other}`"),
                })
            }
        };
        let intent = mapping.map(speaker, &row.act).ok_or_else(|| Error::UnknownLabel {
            dialog: row.dialog_id.clone(),
            kind: "act",
            label: row.act.clone(),
        })?;
        let sentence = Sentence::new(row.text.trim(), intent, OTHERS_SLOT);

        if dialogs.last().map(|d| d.id != row.dialog_id).unwrap_or(true) {
            dialogs.push(AnnotatedDialog {
                id: row.dialog_id.clone(),
                private_info: Default::default(),
                turns: Vec::new(),
                outcome: Default::default(),
            });
        }
        let dialog = dialogs.last_mut().expect("just pushed");
        match dialog.turns.last_mut() {
            Some(turn) if turn.speaker == speaker => turn.sentences.push(sentence),
            _ => dialog.turns.push(Turn::new(speaker, vec![sentence])),
        }
    }
    Ok(Corpus::new(taxonomy, dialogs))
}
