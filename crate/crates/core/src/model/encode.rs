use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::EncodeOptions;
use crate::corpus::{
    model_text, private_info_tokens, AnnotatedDialog, SlotLexicon, Speaker, Taxonomy, Turn, Vocabulary,
};
use crate::error::{Error, Result};

/// Dialog-state embedding index of the private-information region.
pub const STATE_PRIVATE: u8 = 0;
pub const STATE_HUMAN: u8 = 1;
pub const STATE_SYSTEM: u8 = 2;
pub const STATE_COUNT: usize = 3;

pub fn speaker_state(speaker: Speaker) -> u8 {
    match speaker {
        Speaker::Human => STATE_HUMAN,
        Speaker::System => STATE_SYSTEM,
    }
}

/// A separator closing one sentence, with the anchor its classifier input
/// is paired with: the last separator of the previous turn, or the begin
/// token for the first turn in the sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceEnd {
    pub position: usize,
    pub anchor: usize,
    pub speaker: Speaker,
    /// Turn index within the encoded sequence.
    pub turn: usize,
}

/// Span of the appended turn: its speaker token and the end-of-output token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSpan {
    pub start: usize,
    pub end: usize,
    pub speaker: Speaker,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<u32>,
    pub positions: Vec<usize>,
    pub states: Vec<u8>,
    pub sentence_ends: Vec<SentenceEnd>,
    pub candidate: Option<CandidateSpan>,
    /// History turns left out to fit the context.
    pub dropped_turns: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Sentence ends belonging to the appended turn.
    pub fn candidate_sentence_ends(&self) -> impl Iterator<Item = &SentenceEnd> {
        let start = self.candidate.map(|c| c.start).unwrap_or(usize::MAX);
        self.sentence_ends.iter().filter(move |e| e.position > start)
    }

    /// Position of the last separator, or the begin token when there is none.
    pub fn last_sentence_end(&self) -> usize {
        self.sentence_ends.last().map(|e| e.position).unwrap_or(0)
    }
}

/// What follows the dialog history in a sequence.
#[derive(Debug, Clone, Copy)]
pub enum Tail<'a> {
    Nothing,
    /// A complete turn closed by the end-of-output token.
    Candidate(&'a Turn),
    /// Only the speaker token, ready for generation.
    Prompt(Speaker),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTarget {
    pub position: usize,
    pub anchor: usize,
    pub label: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Targets {
    /// `(hidden position, next token)` pairs.
    pub lm: Vec<(usize, u32)>,
    pub human_intent: Vec<ClassTarget>,
    pub human_slot: Vec<ClassTarget>,
    pub system_intent: Vec<ClassTarget>,
    pub system_slot: Vec<ClassTarget>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedExample {
    pub seq: TokenSequence,
    pub targets: Targets,
    pub is_distractor: bool,
}

/// A positive example followed by its distractors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleGroup {
    pub positive: EncodedExample,
    pub distractors: Vec<EncodedExample>,
}

#[derive(Debug, Clone, Copy)]
pub struct Encoder<'a> {
    pub vocab: &'a Vocabulary,
    pub options: EncodeOptions,
    pub context: usize,
}

impl<'a> Encoder<'a> {
    pub fn new(vocab: &'a Vocabulary, options: EncodeOptions, context: usize) -> Self {
        Self {
            vocab,
            options,
            context,
        }
    }

    /// Speaker token, then per sentence an optional intent token, the words
    /// and a separator.
    pub fn turn_tokens(&self, turn: &Turn) -> Result<Vec<u32>> {
        let mut out = vec![self.vocab.speaker(turn.speaker)];
        for sentence in &turn.sentences {
            if self.options.intent_tokens && turn.speaker == Speaker::System {
                let id = self.vocab.intent_id(&sentence.intent).ok_or_else(|| {
                    Error::ModelMismatch(format!("no intent token for `{}`", sentence.intent))
                })?;
                out.push(id);
            }
            out.extend(self.vocab.encode(&sentence.text));
            out.push(self.vocab.sep());
        }
        Ok(out)
    }

    pub fn private_tokens(&self, private: &SlotLexicon) -> Vec<u32> {
        let mut out = vec![self.vocab.bos()];
        out.extend(
            private_info_tokens(private, self.options.delexicalize)
                .iter()
                .map(|t| self.vocab.id(t)),
        );
        out.push(self.vocab.sep());
        out
    }

    /// Lays out private information, as many recent history turns as fit,
    /// and the tail, leaving `reserve` free positions at the end.
    pub fn encode(&self, private: &SlotLexicon, history: &[Turn], tail: Tail<'_>, reserve: usize) -> Result<TokenSequence> {
        let head = self.private_tokens(private);
        let tail_tokens = match tail {
            Tail::Nothing => Vec::new(),
            Tail::Candidate(turn) => {
                let mut t = self.turn_tokens(turn)?;
                t.push(self.vocab.eos());
                t
            }
            Tail::Prompt(speaker) => vec![self.vocab.speaker(speaker)],
        };
        let floor = head.len() + tail_tokens.len() + reserve;
        if floor > self.context {
            return Err(Error::ContextOverflow {
                needed: floor,
                context: self.context,
            });
        }
        let rendered: Vec<Vec<u32>> = history.iter().map(|t| self.turn_tokens(t)).collect::<Result<_>>()?;
        let mut budget = self.context - floor;
        let mut keep_from = history.len();
        while keep_from > 0 && rendered[keep_from - 1].len() <= budget {
            budget -= rendered[keep_from - 1].len();
            keep_from -= 1;
        }
        if matches!(tail, Tail::Nothing) && keep_from == history.len() && !history.is_empty() {
            let needed = head.len() + rendered[history.len() - 1].len() + reserve;
            return Err(Error::ContextOverflow {
                needed,
                context: self.context,
            });
        }

        let mut seq = TokenSequence {
            tokens: Vec::with_capacity(self.context),
            positions: Vec::new(),
            states: Vec::new(),
            sentence_ends: Vec::new(),
            candidate: None,
            dropped_turns: keep_from,
        };
        for &t in &head {
            seq.tokens.push(t);
            seq.states.push(STATE_PRIVATE);
        }
        let mut anchor = 0;
        let mut turn_index = 0;
        let sep = self.vocab.sep();
        let mut push_turn = |seq: &mut TokenSequence, tokens: &[u32], speaker: Speaker| {
            let state = speaker_state(speaker);
            let mut last = anchor;
            for &t in tokens {
                let pos = seq.tokens.len();
                seq.tokens.push(t);
                seq.states.push(state);
                if t == sep {
                    seq.sentence_ends.push(SentenceEnd {
                        position: pos,
                        anchor,
                        speaker,
                        turn: turn_index,
                    });
                    last = pos;
                }
            }
            anchor = last;
            turn_index += 1;
        };
        for (turn, tokens) in history[keep_from..].iter().zip(&rendered[keep_from..]) {
            push_turn(&mut seq, tokens, turn.speaker);
        }
        match tail {
            Tail::Nothing => {}
            Tail::Candidate(turn) => {
                let start = seq.tokens.len();
                push_turn(&mut seq, &tail_tokens[..tail_tokens.len() - 1], turn.speaker);
                seq.tokens.push(self.vocab.eos());
                seq.states.push(speaker_state(turn.speaker));
                seq.candidate = Some(CandidateSpan {
                    start,
                    end: seq.tokens.len() - 1,
                    speaker: turn.speaker,
                });
            }
            Tail::Prompt(speaker) => {
                seq.tokens.push(tail_tokens[0]);
                seq.states.push(speaker_state(speaker));
            }
        }
        seq.positions = (0..seq.tokens.len()).collect();
        Ok(seq)
    }

    /// Encodes `candidate` after `prefix` with its supervision. Distractors
    /// keep the layout but carry no language-modeling or classifier targets.
    pub fn encode_example(
        &self,
        taxonomy: &Taxonomy,
        private: &SlotLexicon,
        prefix: &[Turn],
        candidate: &Turn,
        is_distractor: bool,
    ) -> Result<EncodedExample> {
        if let Some(last) = prefix.last() {
            if last.speaker == candidate.speaker {
                return Err(Error::InvalidDialog {
                    dialog: String::new(),
                    reason: "candidate speaker does not alternate with the prefix".into(),
                });
            }
        }
        let seq = self.encode(private, prefix, Tail::Candidate(candidate), 0)?;
        let mut targets = Targets::default();
        if !is_distractor {
            let span = seq.candidate.expect("candidate tail");
            targets.lm = (span.start..span.end).map(|p| (p, seq.tokens[p + 1])).collect();
            let kept_prefix = &prefix[seq.dropped_turns..];
            let candidate_turn = kept_prefix.len();
            let mut supervise = |turn: &Turn, index: usize| -> Result<()> {
                let ends = seq.sentence_ends.iter().filter(|e| e.turn == index);
                for (end, sentence) in ends.zip(&turn.sentences) {
                    let intent = taxonomy.intent_index(&sentence.intent).ok_or_else(|| Error::UnknownLabel {
                        dialog: String::new(),
                        kind: "intent",
                        label: sentence.intent.clone(),
                    })?;
                    let slot = taxonomy.slot_index(&sentence.slot).ok_or_else(|| Error::UnknownLabel {
                        dialog: String::new(),
                        kind: "slot",
                        label: sentence.slot.clone(),
                    })?;
                    let at = |label| ClassTarget {
                        position: end.position,
                        anchor: end.anchor,
                        label,
                    };
                    let (intents, slots) = match turn.speaker {
                        Speaker::Human => (&mut targets.human_intent, &mut targets.human_slot),
                        Speaker::System => (&mut targets.system_intent, &mut targets.system_slot),
                    };
                    intents.push(at(intent));
                    slots.push(at(slot));
                }
                Ok(())
            };
            if let Some(previous) = kept_prefix.last() {
                supervise(previous, candidate_turn - 1)?;
            }
            supervise(candidate, candidate_turn)?;
        }
        Ok(EncodedExample {
            seq,
            targets,
            is_distractor,
        })
    }
}

/// The dialog with every sentence replaced by its model-facing text.
pub fn prepare_dialog(dialog: &AnnotatedDialog, delexicalize: bool) -> AnnotatedDialog {
    let mut out = dialog.clone();
    for turn in &mut out.turns {
        for sentence in &mut turn.sentences {
            sentence.text = model_text(&sentence.text, dialog, delexicalize);
        }
    }
    out
}

/// One group per system turn of every dialog. Distractors are system turns
/// drawn uniformly from the other dialogs.
pub fn build_groups<R: Rng>(
    encoder: &Encoder<'_>,
    taxonomy: &Taxonomy,
    dialogs: &[AnnotatedDialog],
    distractors: usize,
    rng: &mut R,
) -> Result<Vec<ExampleGroup>> {
    let pool: Vec<(usize, usize)> = dialogs
        .iter()
        .enumerate()
        .flat_map(|(d, dialog)| {
            dialog
                .turns
                .iter()
                .enumerate()
                .filter(|(_, t)| t.speaker == Speaker::System)
                .map(move |(t, _)| (d, t))
        })
        .collect();
    let mut groups = Vec::new();
    for (d, dialog) in dialogs.iter().enumerate() {
        let foreign = pool.iter().filter(|(o, _)| *o != d).count();
        for (t, turn) in dialog.turns.iter().enumerate() {
            if turn.speaker != Speaker::System {
                continue;
            }
            let prefix = &dialog.turns[..t];
            let positive = encoder
                .encode_example(taxonomy, &dialog.private_info, prefix, turn, false)
                .map_err(|e| tag_dialog(e, &dialog.id))?;
            let mut negatives = Vec::with_capacity(distractors);
            if foreign > 0 {
                for _ in 0..distractors {
                    let (od, ot) = loop {
                        let pick = pool[rng.random_range(0..pool.len())];
                        if pick.0 != d {
                            break pick;
                        }
                    };
                    let other = &dialogs[od].turns[ot];
                    negatives.push(
                        encoder
                            .encode_example(taxonomy, &dialog.private_info, prefix, other, true)
                            .map_err(|e| tag_dialog(e, &dialog.id))?,
                    );
                }
            }
            groups.push(ExampleGroup {
                positive,
                distractors: negatives,
            });
        }
    }
    Ok(groups)
}

fn tag_dialog(err: Error, id: &str) -> Error {
    match err {
        Error::UnknownLabel { dialog, kind, label } if dialog.is_empty() => Error::UnknownLabel {
            dialog: id.to_string(),
            kind,
            label,
        },
        Error::InvalidDialog { dialog, reason } if dialog.is_empty() => Error::InvalidDialog {
            dialog: id.to_string(),
            reason,
        },
        other => other,
    }
}
