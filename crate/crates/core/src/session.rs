//! Live chat sessions: the human plays one side, a model variant the other.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{segment_turn, Sentence, SlotLexicon, Speaker, Turn};
use crate::decode::{CandidateResponse, DecodeConfig, DecodeVariant, DialogContext, SentenceLabels};
use crate::error::{Error, Result};
use crate::eval::turn_seed;
use crate::filter::{DialogState, FilterVerdict, RuleSet};
use crate::pipeline::{classify_human, respond, ModelSet, Variant};

/// Slots whose disclosure by the human counts towards task success.
pub const TASK_SUCCESS_SLOTS: [&str; 3] = ["name", "address", "phone_num"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnTrace {
    /// Classifier labels of the human turn, one per sentence.
    pub human_labels: Vec<SentenceLabels>,
    pub route: DecodeVariant,
    pub decode_seed: u64,
    pub candidates: Vec<CandidateResponse>,
    pub filter: Option<FilterVerdict>,
    pub selected: usize,
    pub elapsed_ms: u64,
}

impl TurnTrace {
    pub fn reply(&self) -> &CandidateResponse {
        &self.candidates[self.selected]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub speaker: Speaker,
    pub text: String,
    /// Sentences with their (predicted) labels.
    pub sentences: Vec<Sentence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<TurnTrace>,
}

impl Message {
    pub fn turn(&self) -> Turn {
        Turn::new(self.speaker, self.sentences.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratings {
    pub fluency: u8,
    pub coherence: u8,
    pub engagement: u8,
}

impl Ratings {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("fluency", self.fluency),
            ("coherence", self.coherence),
            ("engagement", self.engagement),
        ] {
            if !(1..=5).contains(&v) {
                return Err(Error::Validation(format!("{name} rating {v} is outside 1..5")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionStats {
    /// Turns in the transcript, both speakers.
    pub length: usize,
    pub task_success: usize,
}

/// One line of a session's append-only log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    Created {
        id: String,
        task: String,
        variant: Variant,
        seed: u64,
        blind: bool,
        lexicon: SlotLexicon,
    },
    Exchange {
        human: Message,
        system: Message,
    },
    Rated {
        ratings: Ratings,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub task: String,
    pub variant: Variant,
    pub seed: u64,
    /// Raters should not see traces.
    pub blind: bool,
    /// The system's private information.
    pub lexicon: SlotLexicon,
    pub state: DialogState,
    pub transcript: Vec<Message>,
    pub ratings: Option<Ratings>,
}

#[derive(Debug, Clone)]
pub struct NewSession {
    pub id: String,
    pub task: String,
    pub variant: Variant,
    pub seed: u64,
    pub blind: bool,
    pub lexicon: SlotLexicon,
}

/// Shared generation settings for every session of a service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatConfig {
    #[serde(default)]
    pub decode: DecodeConfig,
    #[serde(default = "RuleSet::all")]
    pub rules: RuleSet,
}

impl Default for ChatConfig {
    fn default() -> Self {
        Self {
            decode: DecodeConfig::default(),
            rules: RuleSet::all(),
        }
    }
}

impl Session {
    /// Checks the request against the loaded models and returns the session
    /// with its creation event.
    pub fn create(models: &ModelSet, new: NewSession) -> Result<(Session, SessionEvent)> {
        if !models.supports(new.variant) {
            return Err(Error::Validation(format!("variant {} is not served", new.variant)));
        }
        let task = models.taxonomy().map(|t| t.task.clone()).unwrap_or_default();
        if new.task != task {
            return Err(Error::Validation(format!("task `{}` is not served (models are for `{task}`)", new.task)));
        }
        let event = SessionEvent::Created {
            id: new.id,
            task: new.task,
            variant: new.variant,
            seed: new.seed,
            blind: new.blind,
            lexicon: new.lexicon,
        };
        let session = Session::replay(std::slice::from_ref(&event))?;
        Ok((session, event))
    }

    /// Rebuilds a session from its log.
    pub fn replay(events: &[SessionEvent]) -> Result<Session> {
        let Some(SessionEvent::Created {
            id,
            task,
            variant,
            seed,
            blind,
            lexicon,
        }) = events.first()
        else {
            return Err(Error::Validation("session log does not start with a creation event".into()));
        };
        let mut session = Session {
            id: id.clone(),
            task: task.clone(),
            variant: *variant,
            seed: *seed,
            blind: *blind,
            lexicon: lexicon.clone(),
            state: DialogState::default(),
            transcript: Vec::new(),
            ratings: None,
        };
        for event in &events[1..] {
            session.apply(event)?;
        }
        Ok(session)
    }

    pub fn apply(&mut self, event: &SessionEvent) -> Result<()> {
        match event {
            SessionEvent::Created { .. } => {
                return Err(Error::Validation(format!("session {} was created twice", self.id)));
            }
            SessionEvent::Exchange { human, system } => {
                for m in [human, system] {
                    self.state.update_turn(&m.turn());
                    self.transcript.push(m.clone());
                }
            }
            SessionEvent::Rated { ratings } => self.ratings = Some(*ratings),
        }
        Ok(())
    }

    pub fn exchanges(&self) -> usize {
        self.transcript.iter().filter(|m| m.speaker == Speaker::System).count()
    }

    pub fn stats(&self) -> SessionStats {
        SessionStats {
            length: self.transcript.len(),
            task_success: TASK_SUCCESS_SLOTS
                .iter()
                .filter(|s| self.state.human.provided.contains(**s))
                .count(),
        }
    }

    pub fn context(&self) -> DialogContext {
        DialogContext::new(self.lexicon.clone(), self.transcript.iter().map(Message::turn).collect())
    }

    /// Runs one human → system exchange without mutating the session; the
    /// caller applies (and persists) the returned event.
    pub fn exchange(&self, models: &ModelSet, config: &ChatConfig, text: &str) -> Result<SessionEvent> {
        let start = Instant::now();
        let sentences = segment_turn(text);
        if sentences.is_empty() {
            return Err(Error::Validation("message is empty".into()));
        }
        if self.transcript.last().is_some_and(|m| m.speaker == Speaker::Human) {
            return Err(Error::Conflict("it is not the human's turn".into()));
        }
        let ctx = self.context();
        let raw = Turn::new(
            Speaker::Human,
            sentences.iter().map(|s| Sentence::new(s.clone(), "", "")).collect(),
        );
        let human_labels = classify_human(models, self.variant, &ctx, &raw)?.unwrap_or_default();
        let mut human_turn = raw;
        for (s, l) in human_turn.sentences.iter_mut().zip(&human_labels) {
            s.intent = l.intent.clone();
            s.slot = l.slot.clone();
        }

        let mut state = self.state.clone();
        state.update_turn(&human_turn);
        let mut ctx = ctx;
        ctx.turns.push(human_turn.clone());

        let decode_seed = turn_seed(self.seed, 0, self.transcript.len() + 1);
        let decode = DecodeConfig {
            seed: decode_seed,
            ..config.decode.clone()
        };
        let intents: Vec<String> = human_turn.sentences.iter().map(|s| s.intent.clone()).collect();
        let trace = respond(models, self.variant, &ctx, &state, &intents, &decode, &config.rules)?;
        let system_turn = trace.reply().as_turn();
        let trace = TurnTrace {
            human_labels,
            route: trace.route,
            decode_seed,
            selected: trace.selected,
            filter: trace.filter,
            candidates: trace.candidates,
            elapsed_ms: start.elapsed().as_millis() as u64,
        };
        Ok(SessionEvent::Exchange {
            human: Message {
                speaker: Speaker::Human,
                text: sentences.join(" "),
                sentences: human_turn.sentences,
                trace: None,
            },
            system: Message {
                speaker: Speaker::System,
                text: trace.reply().text(),
                sentences: system_turn.sentences,
                trace: Some(trace),
            },
        })
    }

    pub fn rate(&self, ratings: Ratings) -> Result<SessionEvent> {
        ratings.validate()?;
        if self.exchanges() == 0 {
            return Err(Error::Validation("a session needs at least one exchange before rating".into()));
        }
        Ok(SessionEvent::Rated { ratings })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VariantAggregate {
    pub sessions: usize,
    pub rated: usize,
    pub fluency: Option<f64>,
    pub coherence: Option<f64>,
    pub engagement: Option<f64>,
    /// Means over sessions with at least one exchange.
    pub length: Option<f64>,
    pub task_success: Option<f64>,
}

/// Per-variant means of ratings, Length and TaskSuc.
pub fn aggregate<'a>(sessions: impl IntoIterator<Item = &'a Session>) -> BTreeMap<String, VariantAggregate> {
    let mut groups: BTreeMap<String, Vec<&Session>> = BTreeMap::new();
    for s in sessions {
        groups.entry(s.variant.to_string()).or_default().push(s);
    }
    let mean = |xs: &[f64]| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    groups
        .into_iter()
        .map(|(variant, list)| {
            let rated: Vec<Ratings> = list.iter().filter_map(|s| s.ratings).collect();
            let active: Vec<SessionStats> = list.iter().filter(|s| s.exchanges() > 0).map(|s| s.stats()).collect();
            let field = |f: fn(&Ratings) -> u8| mean(&rated.iter().map(|r| f64::from(f(r))).collect::<Vec<_>>());
            let agg = VariantAggregate {
                sessions: list.len(),
                rated: rated.len(),
                fluency: field(|r| r.fluency),
                coherence: field(|r| r.coherence),
                engagement: field(|r| r.engagement),
                length: mean(&active.iter().map(|s| s.length as f64).collect::<Vec<_>>()),
                task_success: mean(&active.iter().map(|s| s.task_success as f64).collect::<Vec<_>>()),
            };
            (variant, agg)
        })
        .collect()
}
