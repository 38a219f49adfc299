use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Speaker, OTHERS_SLOT};
use crate::decode::CandidateResponse;
use crate::error::{Error, Result};

pub const PROVIDING_INFORMATION: &str = "providing_information";
pub const ELICITATION: &str = "elicitation";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeakerState {
    pub provided: BTreeSet<String>,
    pub elicited: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateEvent {
    pub speaker: Speaker,
    pub intent: String,
    pub slot: String,
}

/// What each side has provided and asked for so far.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogState {
    pub human: SpeakerState,
    pub system: SpeakerState,
    pub turns: usize,
    pub history: Vec<StateEvent>,
}

impl DialogState {
    pub fn speaker(&self, speaker: Speaker) -> &SpeakerState {
        match speaker {
            Speaker::Human => &self.human,
            Speaker::System => &self.system,
        }
    }

    fn speaker_mut(&mut self, speaker: Speaker) -> &mut SpeakerState {
        match speaker {
            Speaker::Human => &mut self.human,
            Speaker::System => &mut self.system,
        }
    }

    /// Records one turn given its `(intent, slot)` per sentence.
    pub fn update<'a>(&mut self, speaker: Speaker, labels: impl IntoIterator<Item = (&'a str, &'a str)>) {
        for (intent, slot) in labels {
            self.history.push(StateEvent {
                speaker,
                intent: intent.to_string(),
                slot: slot.to_string(),
            });
            if slot == OTHERS_SLOT || slot.is_empty() {
                continue;
            }
            let side = self.speaker_mut(speaker);
            match intent {
                PROVIDING_INFORMATION => {
                    side.provided.insert(slot.to_string());
                }
                ELICITATION => *side.elicited.entry(slot.to_string()).or_default() += 1,
                _ => {}
            }
        }
        self.turns += 1;
    }

    pub fn update_turn(&mut self, turn: &crate::corpus::Turn) {
        self.update(
            turn.speaker,
            turn.sentences.iter().map(|s| (s.intent.as_str(), s.slot.as_str())),
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RuleKind {
    /// Eliciting a slot the human already provided.
    R1,
    /// Eliciting a slot the system already elicited twice.
    R2,
    /// Providing a slot the system already provided.
    R3,
    /// A degenerate candidate while a non-degenerate one exists.
    R4,
}

impl RuleKind {
    pub const ALL: [RuleKind; 4] = [RuleKind::R1, RuleKind::R2, RuleKind::R3, RuleKind::R4];

    pub fn name(self) -> &'static str {
        match self {
            RuleKind::R1 => "R1",
            RuleKind::R2 => "R2",
            RuleKind::R3 => "R3",
            RuleKind::R4 => "R4",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown filter rule `{name}`")))
    }

    /// Number of violations of this rule by `candidate`.
    pub fn violations(self, candidate: &CandidateResponse, state: &DialogState, ctx: &CheckContext) -> usize {
        if self == RuleKind::R4 {
            return usize::from(candidate.degenerate && ctx.any_non_degenerate);
        }
        candidate
            .sentences
            .iter()
            .filter(|s| {
                let (Some(intent), Some(slot)) = (s.primary_intent(), s.primary_slot()) else {
                    return false;
                };
                if slot == OTHERS_SLOT {
                    return false;
                }
                match self {
                    RuleKind::R1 => intent == ELICITATION && state.human.provided.contains(slot),
                    RuleKind::R2 => {
                        intent == ELICITATION && state.system.elicited.get(slot).copied().unwrap_or(0) >= 2
                    }
                    RuleKind::R3 => intent == PROVIDING_INFORMATION && state.system.provided.contains(slot),
                    RuleKind::R4 => unreachable!(),
                }
            })
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterRule {
    pub name: String,
    pub enabled: bool,
}

/// Rule configuration, `{"rules":[{"name":"R1","enabled":true}, …]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSet {
    pub rules: Vec<FilterRule>,
}

impl RuleSet {
    pub fn new(enabled: &[RuleKind]) -> Self {
        Self {
            rules: RuleKind::ALL
                .iter()
                .map(|r| FilterRule {
                    name: r.name().to_string(),
                    enabled: enabled.contains(r),
                })
                .collect(),
        }
    }

    pub fn all() -> Self {
        Self::new(&RuleKind::ALL)
    }

    pub fn none() -> Self {
        Self::new(&[])
    }

    /// Shipped defaults: every rule for AntiScam, R3 and R4 for
    /// PersuasionForGood.
    pub fn for_task(task: &str) -> Self {
        match task {
            "persuasion" | "persuasionforgood" => Self::new(&[RuleKind::R3, RuleKind::R4]),
            _ => Self::all(),
        }
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        let set: RuleSet = serde_json::from_str(raw).map_err(|e| Error::json("filter rules", e))?;
        set.enabled()?;
        Ok(set)
    }

    pub fn enabled(&self) -> Result<Vec<RuleKind>> {
        let mut out = Vec::new();
        for r in &self.rules {
            let kind = RuleKind::parse(&r.name)?;
            if r.enabled && !out.contains(&kind) {
                out.push(kind);
            }
        }
        Ok(out)
    }
}

/// Facts about the whole candidate pool that some rules consult.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CheckContext {
    pub any_non_degenerate: bool,
}

impl CheckContext {
    pub fn of(candidates: &[CandidateResponse]) -> Self {
        Self {
            any_non_degenerate: candidates.iter().any(|c| !c.degenerate),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleVerdict {
    pub rule: String,
    pub violations: usize,
}

impl RuleVerdict {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Evaluates every enabled rule on one candidate.
pub fn check(candidate: &CandidateResponse, state: &DialogState, rules: &RuleSet, ctx: &CheckContext) -> Result<Vec<RuleVerdict>> {
    Ok(rules
        .enabled()?
        .into_iter()
        .map(|r| RuleVerdict {
            rule: r.name().to_string(),
            violations: r.violations(candidate, state, ctx),
        })
        .collect())
}

pub fn total_violations(verdicts: &[RuleVerdict]) -> usize {
    verdicts.iter().map(|v| v.violations).sum()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterVerdict {
    /// Verdicts per candidate, in pool order.
    pub verdicts: Vec<Vec<RuleVerdict>>,
    pub selected: usize,
    /// Every candidate violated some enabled rule.
    pub fallback: bool,
    /// A second candidate round was drawn.
    pub resampled: bool,
}

fn rank(candidates: &[CandidateResponse], verdicts: &[Vec<RuleVerdict>]) -> (usize, bool) {
    let key = |i: usize| (total_violations(&verdicts[i]), candidates[i].logp);
    let mut best = 0;
    for i in 1..candidates.len() {
        let (v, lp) = key(i);
        let (bv, blp) = key(best);
        if v < bv || (v == bv && lp > blp) {
            best = i;
        }
    }
    (best, total_violations(&verdicts[best]) > 0)
}

/// Picks the most likely candidate passing every enabled rule. If none
/// passes, `resample` is called once and its candidates join the pool;
/// failing that, the least-violating candidate is chosen with `fallback`.
/// Verdicts are written into the candidates.
pub fn select(
    candidates: &mut Vec<CandidateResponse>,
    state: &DialogState,
    rules: &RuleSet,
    resample: Option<&mut dyn FnMut() -> Result<Vec<CandidateResponse>>>,
) -> Result<FilterVerdict> {
    if candidates.is_empty() {
        return Err(Error::Empty("candidate list"));
    }
    let evaluate = |pool: &mut Vec<CandidateResponse>| -> Result<Vec<Vec<RuleVerdict>>> {
        let ctx = CheckContext::of(pool);
        let verdicts: Vec<Vec<RuleVerdict>> = pool.iter().map(|c| check(c, state, rules, &ctx)).collect::<Result<_>>()?;
        for (c, v) in pool.iter_mut().zip(&verdicts) {
            c.verdicts = v.clone();
        }
        Ok(verdicts)
    };
    let mut verdicts = evaluate(candidates)?;
    let (mut selected, mut fallback) = rank(candidates, &verdicts);
    let mut resampled = false;
    if fallback {
        if let Some(resample) = resample {
            candidates.extend(resample()?);
            resampled = true;
            verdicts = evaluate(candidates)?;
            (selected, fallback) = rank(candidates, &verdicts);
        }
    }
    Ok(FilterVerdict {
        verdicts,
        selected,
        fallback,
        resampled,
    })
}
