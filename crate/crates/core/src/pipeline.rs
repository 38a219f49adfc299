//! One system response under each evaluated variant.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{Taxonomy, Turn};
use crate::decode::{
    classify_candidate, classify_turn, generate_candidates, CandidateResponse, DecodeConfig, DecodeVariant, DialogContext,
    SentenceLabels,
};
use crate::error::{Error, Result};
use crate::filter::{select, DialogState, FilterVerdict, RuleSet};
use crate::model::{Checkpoint, TrainingMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Missa,
    /// Missa without the response filter, one candidate.
    MissaSel,
    /// No leading intent tokens.
    MissaCon,
    Vanilla,
    /// Missa for on-task human turns, vanilla otherwise.
    Hybrid,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Missa,
        Variant::MissaSel,
        Variant::MissaCon,
        Variant::Vanilla,
        Variant::Hybrid,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Missa => "missa",
            Variant::MissaSel => "missa-sel",
            Variant::MissaCon => "missa-con",
            Variant::Vanilla => "vanilla",
            Variant::Hybrid => "hybrid",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }

    /// Checkpoint modes the variant needs.
    pub fn required_modes(self) -> &'static [TrainingMode] {
        match self {
            Variant::Missa | Variant::MissaSel => &[TrainingMode::Missa],
            Variant::MissaCon => &[TrainingMode::MissaCon],
            Variant::Vanilla => &[TrainingMode::Vanilla, TrainingMode::MissaCon],
            Variant::Hybrid => &[TrainingMode::Missa, TrainingMode::Vanilla, TrainingMode::MissaCon],
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Trained checkpoints by mode. Vanilla responses are labeled by the
/// missa-con classifier heads, since the vanilla model trains none and the
/// missa heads expect intent tokens.
#[derive(Debug, Clone, Default)]
pub struct ModelSet {
    pub missa: Option<Arc<Checkpoint>>,
    pub missa_con: Option<Arc<Checkpoint>>,
    pub vanilla: Option<Arc<Checkpoint>>,
}

impl ModelSet {
    pub fn get(&self, mode: TrainingMode) -> Option<&Arc<Checkpoint>> {
        match mode {
            TrainingMode::Missa => self.missa.as_ref(),
            TrainingMode::MissaCon => self.missa_con.as_ref(),
            TrainingMode::Vanilla => self.vanilla.as_ref(),
        }
    }

    pub fn insert(&mut self, ckpt: Checkpoint) {
        let slot = match ckpt.mode {
            TrainingMode::Missa => &mut self.missa,
            TrainingMode::MissaCon => &mut self.missa_con,
            TrainingMode::Vanilla => &mut self.vanilla,
        };
        *slot = Some(Arc::new(ckpt));
    }

    fn need(&self, mode: TrainingMode, variant: Variant) -> Result<&Checkpoint> {
        self.get(mode).map(|c| c.as_ref()).ok_or_else(|| {
            Error::ModelMismatch(format!("variant {variant} needs a {} checkpoint", mode.as_str()))
        })
    }

    pub fn supports(&self, variant: Variant) -> bool {
        variant.required_modes().iter().all(|m| self.get(*m).is_some())
    }

    pub fn variants(&self) -> Vec<Variant> {
        Variant::ALL.into_iter().filter(|v| self.supports(*v)).collect()
    }

    /// Loads `<root>/<mode>` for every mode whose directory holds a checkpoint.
    pub fn load_dir(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let mut set = Self::default();
        for mode in [TrainingMode::Missa, TrainingMode::MissaCon, TrainingMode::Vanilla] {
            let dir = root.join(mode.as_str());
            if dir.join(crate::model::SIDECAR_FILE).exists() {
                let ckpt = Checkpoint::load(&dir)?;
                if ckpt.mode != mode {
                    return Err(Error::ModelMismatch(format!(
                        "{} holds a {} checkpoint",
                        dir.display(),
                        ckpt.mode.as_str()
                    )));
                }
                set.insert(ckpt);
            }
        }
        if set.missa.is_none() && set.missa_con.is_none() && set.vanilla.is_none() {
            return Err(Error::Checkpoint(format!("no checkpoints under {}", root.display())));
        }
        Ok(set)
    }

    pub fn taxonomy(&self) -> Option<&Taxonomy> {
        [&self.missa, &self.missa_con, &self.vanilla]
            .into_iter()
            .flatten()
            .map(|c| &c.taxonomy)
            .next()
    }

    /// Checkpoint whose human heads label human turns for `variant`.
    pub fn human_classifier(&self, variant: Variant) -> Option<&Checkpoint> {
        let mode = match variant {
            Variant::Missa | Variant::MissaSel | Variant::Hybrid => TrainingMode::Missa,
            Variant::MissaCon | Variant::Vanilla => TrainingMode::MissaCon,
        };
        self.get(mode).map(|c| c.as_ref())
    }
}

/// `Missa` when any sentence carries an on-task intent.
pub fn hybrid_route<'a>(intents: impl IntoIterator<Item = &'a str>, taxonomy: &Taxonomy) -> DecodeVariant {
    if intents.into_iter().any(|i| taxonomy.is_on_task(i)) {
        DecodeVariant::Missa
    } else {
        DecodeVariant::Vanilla
    }
}

/// Labels a human turn with the variant's classifier, when it has one.
pub fn classify_human(models: &ModelSet, variant: Variant, ctx: &DialogContext, turn: &Turn) -> Result<Option<Vec<SentenceLabels>>> {
    match models.human_classifier(variant) {
        Some(ckpt) => classify_turn(ckpt, ctx, turn).map(Some),
        None => Ok(None),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseTrace {
    pub variant: Variant,
    /// Generator actually used.
    pub route: DecodeVariant,
    pub candidates: Vec<CandidateResponse>,
    pub filter: Option<FilterVerdict>,
    pub selected: usize,
}

impl ResponseTrace {
    pub fn reply(&self) -> &CandidateResponse {
        &self.candidates[self.selected]
    }
}

/// Generates, classifies and (for filtered variants) selects the system's
/// next turn. `human_intents` are the labels of the preceding human turn,
/// used for hybrid routing.
pub fn respond(
    models: &ModelSet,
    variant: Variant,
    ctx: &DialogContext,
    state: &DialogState,
    human_intents: &[String],
    decode: &DecodeConfig,
    rules: &RuleSet,
) -> Result<ResponseTrace> {
    let route = match variant {
        Variant::Missa | Variant::MissaSel => DecodeVariant::Missa,
        Variant::MissaCon => DecodeVariant::MissaCon,
        Variant::Vanilla => DecodeVariant::Vanilla,
        Variant::Hybrid => {
            let tax = &models.need(TrainingMode::Missa, variant)?.taxonomy;
            hybrid_route(human_intents.iter().map(String::as_str), tax)
        }
    };
    let filtered = matches!(variant, Variant::Missa | Variant::MissaCon)
        || (variant == Variant::Hybrid && route == DecodeVariant::Missa);
    let generator = models.need(route.mode(), variant)?;
    let classifier = match route {
        DecodeVariant::Missa => generator,
        _ => models.need(TrainingMode::MissaCon, variant)?,
    };
    let config = DecodeConfig {
        variant: route,
        k: if filtered { decode.k } else { 1 },
        ..decode.clone()
    };
    let draw = |first_stream: u64| -> Result<Vec<CandidateResponse>> {
        generate_candidates(generator, ctx, &config, first_stream)?
            .into_iter()
            .map(|c| classify_candidate(classifier, ctx, c))
            .collect()
    };
    let mut candidates = draw(0)?;
    let (filter, selected) = if filtered {
        let mut resample = || draw(config.k as u64);
        let verdict = select(&mut candidates, state, rules, Some(&mut resample))?;
        let selected = verdict.selected;
        (Some(verdict), selected)
    } else {
        (None, 0)
    };
    Ok(ResponseTrace {
        variant,
        route,
        candidates,
        filter,
        selected,
    })
}
