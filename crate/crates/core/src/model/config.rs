use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficients of the six task losses in the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lm: f64,
    pub human_intent: f64,
    pub human_slot: f64,
    pub system_intent: f64,
    pub system_slot: f64,
    pub next_utterance: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lm: 2.0,
            human_intent: 1.0,
            human_slot: 1.0,
            system_intent: 1.0,
            system_slot: 1.0,
            next_utterance: 1.0,
        }
    }
}

impl LossWeights {
    /// Language modeling and next-utterance classification only.
    pub fn lm_and_next_utterance() -> Self {
        Self {
            human_intent: 0.0,
            human_slot: 0.0,
            system_intent: 0.0,
            system_slot: 0.0,
            ..Self::default()
        }
    }

    pub fn as_array(&self) -> [f64; 6] {
        [
            self.lm,
            self.human_intent,
            self.human_slot,
            self.system_intent,
            self.system_slot,
            self.next_utterance,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub ffn: usize,
    pub context: usize,
    pub dropout: f64,
    pub loss_weights: LossWeights,
    pub distractors: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            heads: 4,
            hidden: 128,
            ffn: 512,
            context: 512,
            dropout: 0.1,
            loss_weights: LossWeights::default(),
            distractors: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.hidden == 0 || self.ffn == 0 {
            return Err(Error::Config("layers, heads, hidden and ffn must be positive".into()));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if self.context < 32 {
            return Err(Error::Config(format!("context {} is below 32", self.context)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} must lie in [0, 1)", self.dropout)));
        }
        if self.loss_weights.as_array().iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

/// How dialogs are rendered into token sequences for a trained model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodeOptions {
    /// Prefix each system sentence with its intent token.
    pub intent_tokens: bool,
    /// Replace private-information values by slot tokens.
    pub delexicalize: bool,
}

/// The three model flavours that can be trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainingMode {
    /// Intent tokens, delexicalized text, all heads.
    Missa,
    /// As `Missa` but without intent tokens.
    MissaCon,
    /// Raw text, no intent tokens, language modeling and next-utterance only.
    Vanilla,
}

impl TrainingMode {
    pub fn encode_options(self) -> EncodeOptions {
        match self {
            TrainingMode::Missa => EncodeOptions {
                intent_tokens: true,
                delexicalize: true,
            },
            TrainingMode::MissaCon => EncodeOptions {
                intent_tokens: false,
                delexicalize: true,
            },
            TrainingMode::Vanilla => EncodeOptions {
                intent_tokens: false,
                delexicalize: false,
            },
        }
    }

    pub fn default_weights(self) -> LossWeights {
        match self {
            TrainingMode::Vanilla => LossWeights::lm_and_next_utterance(),
            _ => LossWeights::default(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrainingMode::Missa => "missa",
            TrainingMode::MissaCon => "missa-con",
            TrainingMode::Vanilla => "vanilla",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "missa" | "missa-sel" => Ok(TrainingMode::Missa),
            "missa-con" => Ok(TrainingMode::MissaCon),
            "vanilla" => Ok(TrainingMode::Vanilla),
            other => Err(Error::Config(format!("no training mode for `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ModelConfig::default().validate().unwrap();
        let w = LossWeights::default();
        assert_eq!(w.as_array(), [2.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn invalid_configs() {
        let bad = ModelConfig { hidden: 130, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ModelConfig { context: 16, ..Default::default() };
        assert!(bad.validate().is_err());
        let mut bad = ModelConfig::default();
        bad.loss_weights.lm = -1.0;
        assert!(bad.validate().is_err());
    }
}
