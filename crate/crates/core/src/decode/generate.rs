use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nucleus::nucleus_filter;
use crate::corpus::{delexicalize, relexicalize, Sentence, SlotLexicon, Speaker, Turn};
use crate::error::{Error, Result};
use crate::filter::RuleVerdict;
use crate::model::{Checkpoint, Head, Tail, TokenSequence, TrainingMode, STATE_SYSTEM};
use crate::nnet::kernels::softmax_in_place;

/// Which generation procedure to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecodeVariant {
    Missa,
    MissaCon,
    Vanilla,
}

impl DecodeVariant {
    pub fn mode(self) -> TrainingMode {
        match self {
            DecodeVariant::Missa => TrainingMode::Missa,
            DecodeVariant::MissaCon => TrainingMode::MissaCon,
            DecodeVariant::Vanilla => TrainingMode::Vanilla,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    /// Nucleus mass in `(0, 1]`.
    pub p: f64,
    pub temperature: f64,
    #[serde(alias = "K")]
    pub k: usize,
    pub max_sentences: usize,
    pub max_tokens: usize,
    pub variant: DecodeVariant,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            p: 0.9,
            temperature: 1.0,
            k: 5,
            max_sentences: 4,
            max_tokens: 30,
            variant: DecodeVariant::Missa,
            seed: 0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::Config(format!("nucleus mass p={} must lie in (0, 1]", self.p)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature {} must be positive", self.temperature)));
        }
        if self.k == 0 || self.max_sentences == 0 || self.max_tokens == 0 {
            return Err(Error::Config("k, max_sentences and max_tokens must be at least 1".into()));
        }
        Ok(())
    }

    /// Positions a generated turn may occupy, including its end token.
    pub fn budget(&self) -> usize {
        self.max_sentences * (self.max_tokens + 2) + 1
    }
}

/// The dialog so far in surface form, with the system's private information.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogContext {
    pub lexicon: SlotLexicon,
    pub turns: Vec<Turn>,
}

impl DialogContext {
    pub fn new(lexicon: SlotLexicon, turns: Vec<Turn>) -> Self {
        Self { lexicon, turns }
    }

    /// Model-facing copy of `turn` for a checkpoint's mode.
    pub fn prepare(&self, turn: &Turn, delexicalized: bool) -> Turn {
        let mut out = turn.clone();
        if delexicalized {
            for s in &mut out.sentences {
                s.text = delexicalize(&s.text, &self.lexicon);
            }
        }
        out
    }

    pub fn encode(&self, ckpt: &Checkpoint, tail: Option<&Turn>, prompt: Option<Speaker>, reserve: usize) -> Result<TokenSequence> {
        let delex = ckpt.mode.encode_options().delexicalize;
        let history: Vec<Turn> = self.turns.iter().map(|t| self.prepare(t, delex)).collect();
        let tail_turn = tail.map(|t| self.prepare(t, delex));
        let tail = match (&tail_turn, prompt) {
            (Some(t), _) => Tail::Candidate(t),
            (None, Some(s)) => Tail::Prompt(s),
            (None, None) => Tail::Nothing,
        };
        crate::model::encoder(ckpt).encode(&self.lexicon, &history, tail, reserve)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSentence {
    /// Intent token the sentence was generated under.
    pub intent: Option<String>,
    pub text: String,
    pub delex_text: String,
    pub predicted_intent: Option<String>,
    pub predicted_slot: Option<String>,
    /// The generated intent token and the classifier disagree.
    #[serde(default)]
    pub intent_disagrees: bool,
}

impl CandidateSentence {
    /// Generated intent when present, classifier prediction otherwise.
    pub fn primary_intent(&self) -> Option<&str> {
        self.intent.as_deref().or(self.predicted_intent.as_deref())
    }

    pub fn primary_slot(&self) -> Option<&str> {
        self.predicted_slot.as_deref()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResponse {
    pub sentences: Vec<CandidateSentence>,
    /// Joint log-probability under the masked, temperature-scaled model.
    pub logp: f64,
    /// Nucleus size at every sampled step.
    pub nucleus_sizes: Vec<usize>,
    /// Generated tokens, control tokens included.
    pub tokens: Vec<String>,
    pub degenerate: bool,
    /// Slot tokens with no value in the session lexicon.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unresolved_slots: Vec<String>,
    #[serde(default)]
    pub next_utterance_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub verdicts: Vec<RuleVerdict>,
}

impl CandidateResponse {
    pub fn text(&self) -> String {
        self.sentences
            .iter()
            .map(|s| s.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn primary_intent(&self) -> Option<&str> {
        self.sentences.first().and_then(|s| s.primary_intent())
    }

    pub fn primary_slot(&self) -> Option<&str> {
        self.sentences.first().and_then(|s| s.primary_slot())
    }

    /// `(intent, slot)` per sentence, empty strings where unknown.
    pub fn labels(&self) -> Vec<(String, String)> {
        self.sentences
            .iter()
            .map(|s| {
                (
                    s.primary_intent().unwrap_or_default().to_string(),
                    s.primary_slot().unwrap_or_default().to_string(),
                )
            })
            .collect()
    }

    /// System turn in surface form carrying the primary labels.
    pub fn as_turn(&self) -> Turn {
        Turn::new(
            Speaker::System,
            self.sentences
                .iter()
                .map(|s| {
                    Sentence::new(
                        s.text.clone(),
                        s.primary_intent().unwrap_or_default(),
                        s.primary_slot().unwrap_or_default(),
                    )
                })
                .collect(),
        )
    }
}

fn check_variant(ckpt: &Checkpoint, variant: DecodeVariant) -> Result<()> {
    if ckpt.mode != variant.mode() {
        return Err(Error::ModelMismatch(format!(
            "{} decoding needs a {} checkpoint, got {}",
            variant.mode().as_str(),
            variant.mode().as_str(),
            ckpt.mode.as_str()
        )));
    }
    ckpt.check_consistency()
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Phase {
    SentenceStart,
    Words(usize),
}

/// Samples `config.k` candidate system turns, candidate `i` from random
/// stream `first_stream + i` of the seed.
pub fn generate_candidates(ckpt: &Checkpoint, ctx: &DialogContext, config: &DecodeConfig, first_stream: u64) -> Result<Vec<CandidateResponse>> {
    config.validate()?;
    check_variant(ckpt, config.variant)?;
    let seq = ctx.encode(ckpt, None, Some(Speaker::System), config.budget())?;
    let mut base = ckpt.model.incremental();
    base.push_sequence(&seq.tokens, &seq.states)?;
    let vocab = &ckpt.vocab;
    let intent_ids = vocab.intent_ids();
    let words: Vec<u32> = (0..vocab.len() as u32)
        .filter(|&id| !vocab.is_control(id))
        .collect();
    let (eos, sep) = (vocab.eos(), vocab.sep());
    let with_intents = config.variant == DecodeVariant::Missa;

    (0..config.k as u64)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(first_stream + k);
            let mut dec = base.clone();
            let mut out = CandidateResponse {
                sentences: Vec::new(),
                logp: 0.0,
                nucleus_sizes: Vec::new(),
                tokens: Vec::new(),
                degenerate: false,
                unresolved_slots: Vec::new(),
                next_utterance_score: None,
                verdicts: Vec::new(),
            };
            let mut phase = Phase::SentenceStart;
            let mut intent: Option<String> = None;
            let mut current: Vec<u32> = Vec::new();
            let mut finished = 0usize;
            let mut allowed: Vec<u32> = Vec::with_capacity(vocab.len());
            loop {
                allowed.clear();
                match phase {
                    Phase::SentenceStart if finished >= config.max_sentences => allowed.push(eos),
                    Phase::SentenceStart => {
                        if with_intents {
                            allowed.extend(&intent_ids);
                        } else {
                            allowed.extend(&words);
                        }
                        if finished > 0 || !with_intents {
                            allowed.push(eos);
                        }
                    }
                    Phase::Words(n) if n >= config.max_tokens => allowed.push(sep),
                    Phase::Words(n) => {
                        allowed.extend(&words);
                        if n > 0 {
                            allowed.push(sep);
                        }
                    }
                }
                let logits = ckpt.model.lm_row(dec.last_hidden());
                let mut masked: Vec<f64> = allowed.iter().map(|&t| logits[t as usize] / config.temperature).collect();
                softmax_in_place(&mut masked);
                let nucleus = nucleus_filter(&masked, config.p);
                let choice = nucleus.pick(rng.random::<f64>());
                let token = allowed[choice];
                out.logp += masked[choice].ln();
                out.nucleus_sizes.push(nucleus.len());
                out.tokens.push(vocab.token(token).to_string());
                dec.push(token, STATE_SYSTEM)?;

                if token == eos {
                    break;
                }
                phase = match phase {
                    Phase::SentenceStart => {
                        if let Some(name) = vocab.intent_of(token) {
                            intent = Some(name.to_string());
                            Phase::Words(0)
                        } else {
                            current.push(token);
                            Phase::Words(1)
                        }
                    }
                    Phase::Words(_) if token == sep => {
                        let delex_text = vocab.decode(&current);
                        let relex = relexicalize(&delex_text, &ctx.lexicon);
                        for slot in relex.unresolved {
                            if !out.unresolved_slots.contains(&slot) {
                                out.unresolved_slots.push(slot);
                            }
                        }
                        out.sentences.push(CandidateSentence {
                            intent: intent.take(),
                            text: relex.text,
                            delex_text,
                            predicted_intent: None,
                            predicted_slot: None,
                            intent_disagrees: false,
                        });
                        current.clear();
                        finished += 1;
                        Phase::SentenceStart
                    }
                    Phase::Words(n) => {
                        current.push(token);
                        Phase::Words(n + 1)
                    }
                };
            }
            out.degenerate = out.sentences.is_empty();
            out.next_utterance_score = Some(ckpt.model.next_utterance_row(dec.last_hidden()));
            Ok(out)
        })
        .collect()
}

/// `config.k` candidates from streams `0..k`.
pub fn generate_turn(ckpt: &Checkpoint, ctx: &DialogContext, config: &DecodeConfig) -> Result<Vec<CandidateResponse>> {
    generate_candidates(ckpt, ctx, config, 0)
}

/// Argmax labels of one classified sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceLabels {
    pub intent: String,
    pub slot: String,
}

/// Classifies every sentence of `turn`, appended after the context, with
/// the heads of its speaker.
pub fn classify_turn(ckpt: &Checkpoint, ctx: &DialogContext, turn: &Turn) -> Result<Vec<SentenceLabels>> {
    if turn.sentences.is_empty() {
        return Ok(Vec::new());
    }
    ckpt.check_consistency()?;
    let seq = ctx.encode(ckpt, Some(turn), None, 0)?;
    let hidden = ckpt.model.hidden_states(&seq)?;
    let (intent_head, slot_head) = match turn.speaker {
        Speaker::Human => (Head::HumanIntent, Head::HumanSlot),
        Speaker::System => (Head::SystemIntent, Head::SystemSlot),
    };
    let argmax = |row: Vec<f64>| {
        row.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0
    };
    Ok(seq
        .candidate_sentence_ends()
        .map(|end| {
            let anchor = hidden.row(end.anchor);
            let h = hidden.row(end.position);
            let intent = argmax(ckpt.model.classifier_row(intent_head, anchor, h));
            let slot = argmax(ckpt.model.classifier_row(slot_head, anchor, h));
            SentenceLabels {
                intent: ckpt.taxonomy.intents[intent].name.clone(),
                slot: ckpt.taxonomy.slots[slot].clone(),
            }
        })
        .collect())
}

/// Fills the classifier predictions of a candidate. A generated intent
/// token stays primary; disagreement with the classifier is flagged.
pub fn classify_candidate(ckpt: &Checkpoint, ctx: &DialogContext, mut candidate: CandidateResponse) -> Result<CandidateResponse> {
    if candidate.sentences.is_empty() {
        candidate.degenerate = true;
        return Ok(candidate);
    }
    let turn = Turn::new(
        Speaker::System,
        candidate
            .sentences
            .iter()
            .map(|s| Sentence::new(s.text.clone(), s.intent.clone().unwrap_or_default(), ""))
            .collect(),
    );
    let labels = classify_turn(ckpt, ctx, &turn)?;
    for (s, l) in candidate.sentences.iter_mut().zip(labels) {
        s.intent_disagrees = s.intent.as_deref().is_some_and(|i| i != l.intent);
        s.predicted_intent = Some(l.intent);
        s.predicted_slot = Some(l.slot);
    }
    Ok(candidate)
}

/// Whether generated tokens follow the variant's grammar: for missa
/// `(intent word+ sep)+ eos`, otherwise `(word+ sep)* eos` with no intent
/// tokens.
pub fn is_well_formed<S: AsRef<str>>(tokens: &[S], variant: DecodeVariant) -> bool {
    use crate::corpus::{intent_of_token, EOS, SEP};
    let Some((last, body)) = tokens.split_last() else {
        return false;
    };
    if last.as_ref() != EOS {
        return false;
    }
    let with_intents = variant == DecodeVariant::Missa;
    let mut sentences = 0;
    let mut i = 0;
    while i < body.len() {
        if with_intents {
            if intent_of_token(body[i].as_ref()).is_none() {
                return false;
            }
            i += 1;
        }
        let start = i;
        while i < body.len() && body[i].as_ref() != SEP {
            let t = body[i].as_ref();
            if t == EOS || intent_of_token(t).is_some() {
                return false;
            }
            i += 1;
        }
        if i == body.len() || i == start {
            return false;
        }
        i += 1;
        sentences += 1;
    }
    !with_intents || sentences > 0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grammar() {
        let ok = ["<intent:greeting>", "hi", "<sep>", "<intent:elicitation>", "who", "?", "<sep>", "<eos>"];
        assert!(is_well_formed(&ok, DecodeVariant::Missa));
        assert!(!is_well_formed(&ok, DecodeVariant::MissaCon));
        assert!(!is_well_formed(&["<eos>"], DecodeVariant::Missa));
        assert!(is_well_formed(&["<eos>"], DecodeVariant::MissaCon));
        assert!(!is_well_formed(&["<intent:greeting>", "<sep>", "<eos>"], DecodeVariant::Missa));
        assert!(!is_well_formed(&["<intent:greeting>", "hi", "<eos>"], DecodeVariant::Missa));
        assert!(is_well_formed(&["hi", "<sep>", "<eos>"], DecodeVariant::Vanilla));
        assert!(!is_well_formed(&["hi", "<sep>"], DecodeVariant::Vanilla));
    }

    #[test]
    fn config_json_uses_typed_field_names() {
        let cfg: DecodeConfig =
            serde_json::from_str(r#"{"p":0.5,"temperature":0.7,"K":3,"max_sentences":2,"max_tokens":9,"variant":"missa-con","seed":4}"#)
                .unwrap();
        assert_eq!(cfg.k, 3);
        assert_eq!(cfg.variant, DecodeVariant::MissaCon);
        assert!(DecodeConfig { p: 0.0, ..Default::default() }.validate().is_err());
        assert!(DecodeConfig { temperature: 0.0, ..Default::default() }.validate().is_err());
        assert_eq!(DecodeConfig::default().budget(), 4 * 32 + 1);
    }
}
