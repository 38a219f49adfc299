//! Hierarchical intent and semantic slot label sets.
//!
//! Intents split into task-specific on-task actions and task-agnostic
//! off-task dialog acts. The off-task half is shared by every task, so a new
//! task only has to declare its on-task intents and its slots.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// The catch-all slot every taxonomy carries.
pub const OTHERS_SLOT: &str = "others";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IntentCategory {
    #[serde(rename = "on-task")]
    OnTask,
    #[serde(rename = "off-task-general")]
    OffTaskGeneral,
    #[serde(rename = "off-task-social")]
    OffTaskSocial,
}

impl IntentCategory {
    pub fn is_on_task(self) -> bool {
        matches!(self, IntentCategory::OnTask)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IntentLabel {
    pub name: String,
    pub category: IntentCategory,
}

impl IntentLabel {
    pub fn new(name: impl Into<String>, category: IntentCategory) -> Self {
        Self {
            name: name.into(),
            category,
        }
    }
}

pub const OFF_TASK_GENERAL: [&str; 6] = [
    "open_question",
    "yes_no_question",
    "positive_answer",
    "negative_answer",
    "responsive_statement",
    "nonresponsive_statement",
];

pub const OFF_TASK_SOCIAL: [&str; 6] = [
    "greeting",
    "closing",
    "apology",
    "thanking",
    "respond_to_thank",
    "hold",
];

pub const ANTISCAM_ON_TASK: [&str; 3] = ["elicitation", "providing_information", "refusal"];

pub const ANTISCAM_SLOTS: [&str; 13] = [
    "order_detail",
    "order_update",
    "payment",
    "name",
    "identity",
    "address",
    "phone_num",
    "card_info",
    "card_num",
    "card_cvs",
    "card_date",
    "account_detail",
    OTHERS_SLOT,
];

pub const PERSUASION_ON_TASK: [&str; 9] = [
    "agree_donation",
    "disagree_donation",
    "disagree_donation_more",
    "ask_donation_amount",
    "ask_donate_more",
    "proposition_of_donation",
    "er_confirm_donation",
    "ee_confirm_donation",
    "provide_donation_amount",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub task: String,
    pub intents: Vec<IntentLabel>,
    pub slots: Vec<String>,
}

impl Taxonomy {
    /// Builds a taxonomy from task-specific on-task intents and slots; the
    /// twelve off-task intents are appended automatically.
    pub fn with_off_task(task: &str, on_task: &[&str], slots: &[&str]) -> Result<Self> {
        let mut intents: Vec<IntentLabel> = on_task
            .iter()
            .map(|n| IntentLabel::new(*n, IntentCategory::OnTask))
            .collect();
        intents.extend(
            OFF_TASK_GENERAL
                .iter()
                .map(|n| IntentLabel::new(*n, IntentCategory::OffTaskGeneral)),
        );
        intents.extend(
            OFF_TASK_SOCIAL
                .iter()
                .map(|n| IntentLabel::new(*n, IntentCategory::OffTaskSocial)),
        );
        let taxonomy = Taxonomy {
            task: task.to_string(),
            intents,
            slots: slots.iter().map(|s| s.to_string()).collect(),
        };
        taxonomy.validate()?;
        Ok(taxonomy)
    }

    pub fn antiscam() -> Self {
        Self::with_off_task("antiscam", &ANTISCAM_ON_TASK, &ANTISCAM_SLOTS)
            .expect("shipped antiscam taxonomy is valid")
    }

    /// Persuasion has no slot scheme of its own; only the catch-all slot.
    pub fn persuasion() -> Self {
        Self::with_off_task("persuasion", &PERSUASION_ON_TASK, &[OTHERS_SLOT])
            .expect("shipped persuasion taxonomy is valid")
    }

    pub fn for_task(task: &str) -> Result<Self> {
        match task {
            "antiscam" => Ok(Self::antiscam()),
            "persuasion" | "persuasionforgood" => Ok(Self::persuasion()),
            other => Err(Error::InvalidTaxonomy(format!("unknown task `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for intent in &self.intents {
            if intent.name.is_empty() || !seen.insert(intent.name.as_str()) {
                return Err(Error::InvalidTaxonomy(format!(
                    "duplicate or empty intent `{}`",
                    intent.name
                )));
            }
        }
        let mut seen = HashSet::new();
        for slot in &self.slots {
            if slot.is_empty() || !seen.insert(slot.as_str()) {
                return Err(Error::InvalidTaxonomy(format!(
                    "duplicate or empty slot `{slot}`"
                )));
            }
        }
        if !self.slots.iter().any(|s| s == OTHERS_SLOT) {
            return Err(Error::InvalidTaxonomy(format!(
                "slot `{OTHERS_SLOT}` is missing"
            )));
        }
        Ok(())
    }

    pub fn intent_index(&self, name: &str) -> Option<usize> {
        self.intents.iter().position(|i| i.name == name)
    }

    pub fn slot_index(&self, name: &str) -> Option<usize> {
        self.slots.iter().position(|s| s == name)
    }

    pub fn intent(&self, name: &str) -> Option<&IntentLabel> {
        self.intents.iter().find(|i| i.name == name)
    }

    pub fn is_on_task(&self, intent: &str) -> bool {
        self.intent(intent)
            .map(|i| i.category.is_on_task())
            .unwrap_or(false)
    }

    pub fn on_task_count(&self) -> usize {
        self.intents
            .iter()
            .filter(|i| i.category.is_on_task())
            .count()
    }

    /// Stable content hash, recorded in checkpoints to catch label-set drift.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("taxonomy serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}
