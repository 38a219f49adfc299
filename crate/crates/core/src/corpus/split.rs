use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dialog::Corpus;
use crate::error::{Error, Result};

pub const MIN_SPLIT_DIALOGS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Corpus,
    pub validation: Corpus,
    pub test: Corpus,
}

/// Dialog-level 80/10/10 split. Validation and test each get `round(0.1 N)`
/// dialogs and the remainder goes to training. Dialogs keep corpus order
/// within each split.
pub fn split_corpus(corpus: &Corpus, seed: u64) -> Result<Splits> {
    let n = corpus.dialogs.len();
    if n < MIN_SPLIT_DIALOGS {
        return Err(Error::CorpusTooSmall {
            found: n,
            required: MIN_SPLIT_DIALOGS,
        });
    }
    let held_out = (n as f64 * 0.1).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut test: Vec<usize> = order[..held_out].to_vec();
    let mut validation: Vec<usize> = order[held_out..2 * held_out].to_vec();
    let mut train: Vec<usize> = order[2 * held_out..].to_vec();
    test.sort_unstable();
    validation.sort_unstable();
    train.sort_unstable();

    let pick = |idx: &[usize]| corpus.with_dialogs(idx.iter().map(|&i| corpus.dialogs[i].clone()).collect());
    Ok(Splits {
        train: pick(&train),
        validation: pick(&validation),
        test: pick(&test),
    })
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;
    use crate::corpus::{AnnotatedDialog, Sentence, Speaker, Taxonomy, Turn};

    fn corpus(n: usize) -> Corpus {
        let dialogs = (0..n)
            .map(|i| AnnotatedDialog {
                id: format!("d{i}"),
                private_info: Default::default(),
                turns: vec![Turn::new(
                    Speaker::Human,
                    vec![Sentence::new("Hi.", "greeting", "others")],
                )],
                outcome: Default::default(),
            })
            .collect();
        Corpus::new(Taxonomy::antiscam(), dialogs)
    }

    fn ids(c: &Corpus) -> HashSet<String> {
        c.dialogs.iter().map(|d| d.id.clone()).collect()
    }

    #[test]
    fn split_sizes() {
        let s = split_corpus(&corpus(220), 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (176, 22, 22));
        let s = split_corpus(&corpus(10), 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (8, 1, 1));
        let s = split_corpus(&corpus(16), 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (12, 2, 2));
    }

    #[test]
    fn too_small() {
        assert!(matches!(
            split_corpus(&corpus(9), 0),
            Err(Error::CorpusTooSmall { found: 9, .. })
        ));
    }

    #[test]
    fn deterministic_disjoint_and_complete() {
        let c = corpus(57);
        let a = split_corpus(&c, 42).unwrap();
        let b = split_corpus(&c, 42).unwrap();
        assert_eq!(a, b);
        let (tr, va, te) = (ids(&a.train), ids(&a.validation), ids(&a.test));
        assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
        assert_eq!(tr.len() + va.len() + te.len(), 57);
        assert_eq!(te.len(), 6);
        let other = split_corpus(&c, 43).unwrap();
        assert_ne!(ids(&other.test), te);
    }
}
