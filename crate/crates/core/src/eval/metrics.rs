use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Speaker};
use crate::error::{Error, Result};

/// Conditional frequencies `p(system label | human label)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransitionTable {
    pub counts: BTreeMap<String, BTreeMap<String, u64>>,
    pub probabilities: BTreeMap<String, BTreeMap<String, f64>>,
}

impl TransitionTable {
    pub fn from_pairs<I, A, B>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        let mut counts: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
        for (given, next) in pairs {
            *counts.entry(given.into()).or_default().entry(next.into()).or_default() += 1;
        }
        let probabilities = counts
            .iter()
            .map(|(given, row)| {
                let total: u64 = row.values().sum();
                let probs = row
                    .iter()
                    .map(|(next, &c)| (next.clone(), c as f64 / total as f64))
                    .collect();
                (given.clone(), probs)
            })
            .collect();
        Self {
            counts,
            probabilities,
        }
    }

    /// `p(predicted | given)`, 0 for unseen pairs.
    pub fn probability(&self, given: &str, predicted: &str) -> f64 {
        self.probabilities
            .get(given)
            .and_then(|row| row.get(predicted))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn observations(&self, given: &str) -> u64 {
        self.counts.get(given).map(|r| r.values().sum()).unwrap_or(0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransitionTables {
    pub intent: TransitionTable,
    pub slot: TransitionTable,
}

/// Counts, for every human turn directly followed by a system turn, the
/// pair (last human sentence label, system sentence label) once per system
/// sentence.
pub fn build_transition_table(train: &Corpus) -> Result<TransitionTables> {
    let mut intents = Vec::new();
    let mut slots = Vec::new();
    for dialog in &train.dialogs {
        for pair in dialog.turns.windows(2) {
            let (human, system) = (&pair[0], &pair[1]);
            if human.speaker != Speaker::Human || system.speaker != Speaker::System {
                continue;
            }
            let Some(last) = human.sentences.last() else { continue };
            for s in &system.sentences {
                intents.push((last.intent.clone(), s.intent.clone()));
                slots.push((last.slot.clone(), s.slot.clone()));
            }
        }
    }
    if intents.is_empty() {
        return Err(Error::Eval("training split has no adjacent human/system turn pairs".into()));
    }
    Ok(TransitionTables {
        intent: TransitionTable::from_pairs(intents),
        slot: TransitionTable::from_pairs(slots),
    })
}

fn check_lengths(predicted: usize, gold: usize) -> Result<()> {
    if gold == 0 {
        return Err(Error::Empty("evaluation set"));
    }
    if predicted != gold {
        return Err(Error::Eval(format!("{predicted} predictions for {gold} gold turns")));
    }
    Ok(())
}

fn mean(scores: &[f64]) -> f64 {
    scores.iter().sum::<f64>() / scores.len() as f64
}

/// 1 where the prediction equals the gold label, else 0.
pub fn match_scores<S: AsRef<str>, G: AsRef<str>>(predicted: &[S], gold: &[G]) -> Result<Vec<f64>> {
    check_lengths(predicted.len(), gold.len())?;
    Ok(predicted
        .iter()
        .zip(gold)
        .map(|(p, g)| f64::from(u8::from(p.as_ref() == g.as_ref())))
        .collect())
}

/// 1 on a match, else `p(predicted | human label)` from `table`.
pub fn expected_scores<S: AsRef<str>, G: AsRef<str>, H: AsRef<str>>(
    predicted: &[S],
    gold: &[G],
    table: &TransitionTable,
    human: &[H],
) -> Result<Vec<f64>> {
    check_lengths(predicted.len(), gold.len())?;
    if human.len() != gold.len() {
        return Err(Error::Eval(format!("{} human labels for {} turns", human.len(), gold.len())));
    }
    Ok(predicted
        .iter()
        .zip(gold)
        .zip(human)
        .map(|((p, g), h)| {
            if p.as_ref() == g.as_ref() {
                1.0
            } else {
                table.probability(h.as_ref(), p.as_ref())
            }
        })
        .collect())
}

/// Response intent prediction: fraction of turns whose primary predicted
/// intent equals the gold primary intent.
pub fn rip<S: AsRef<str>, G: AsRef<str>>(predicted: &[S], gold: &[G]) -> Result<f64> {
    Ok(mean(&match_scores(predicted, gold)?))
}

/// Response slot prediction, the slot analogue of [`rip`].
pub fn rsp<S: AsRef<str>, G: AsRef<str>>(predicted: &[S], gold: &[G]) -> Result<f64> {
    rip(predicted, gold)
}

pub fn erip<S: AsRef<str>, G: AsRef<str>, H: AsRef<str>>(
    predicted: &[S],
    gold: &[G],
    table: &TransitionTable,
    human: &[H],
) -> Result<f64> {
    Ok(mean(&expected_scores(predicted, gold, table, human)?))
}

pub fn ersp<S: AsRef<str>, G: AsRef<str>, H: AsRef<str>>(
    predicted: &[S],
    gold: &[G],
    table: &TransitionTable,
    human: &[H],
) -> Result<f64> {
    erip(predicted, gold, table, human)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AnnotatedDialog, Sentence, SlotLexicon, Taxonomy, Turn};

    fn exchange(human: (&str, &str), system: &[(&str, &str)]) -> Vec<Turn> {
        vec![
            Turn::new(Speaker::Human, vec![Sentence::new("h", human.0, human.1)]),
            Turn::new(
                Speaker::System,
                system.iter().map(|(i, s)| Sentence::new("s", *i, *s)).collect(),
            ),
        ]
    }

    fn corpus(turns: Vec<Vec<Turn>>) -> Corpus {
        let dialogs = turns
            .into_iter()
            .enumerate()
            .map(|(i, t)| AnnotatedDialog {
                id: format!("d{i}"),
                private_info: SlotLexicon::default(),
                turns: t,
                outcome: Default::default(),
            })
            .collect();
        Corpus::new(Taxonomy::antiscam(), dialogs)
    }

    #[test]
    fn worked_example() {
        let c = corpus(vec![
            exchange(("elicitation", "name"), &[("refusal", "others"), ("providing_information", "name")]),
            exchange(("elicitation", "name"), &[("refusal", "others"), ("providing_information", "name")]),
        ]);
        let t = build_transition_table(&c).unwrap();
        assert_eq!(t.intent.probability("elicitation", "refusal"), 0.5);
        assert_eq!(t.intent.probability("greeting", "refusal"), 0.0);
        let s = expected_scores(&["providing_information"], &["refusal"], &t.intent, &["elicitation"]).unwrap();
        assert_eq!(s, vec![0.5]);
    }

    #[test]
    fn single_bigram_is_certain() {
        let c = corpus(vec![exchange(("greeting", "others"), &[("greeting", "others")])]);
        let t = build_transition_table(&c).unwrap();
        assert_eq!(t.intent.probability("greeting", "greeting"), 1.0);
    }

    #[test]
    fn no_pairs_is_an_error() {
        let c = corpus(vec![vec![Turn::new(Speaker::Human, vec![Sentence::new("h", "greeting", "others")])]]);
        assert!(build_transition_table(&c).is_err());
        assert!(rip::<&str, &str>(&[], &[]).is_err());
        assert!(rip(&["a"], &["a", "b"]).is_err());
    }

    #[test]
    fn extremes() {
        assert_eq!(rip(&["a", "b"], &["a", "b"]).unwrap(), 1.0);
        assert_eq!(rip(&["b", "a"], &["a", "b"]).unwrap(), 0.0);
        let table = TransitionTable::default();
        assert_eq!(erip(&["a", "b"], &["a", "b"], &table, &["x", "y"]).unwrap(), 1.0);
    }
}
