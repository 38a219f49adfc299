/// Tokens kept by nucleus filtering and their renormalized probabilities,
/// in descending probability order.
#[derive(Debug, Clone, PartialEq)]
pub struct Nucleus {
    pub indices: Vec<usize>,
    pub probs: Vec<f64>,
}

impl Nucleus {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Picks an entry for a uniform draw `u` in `[0, 1)`.
    pub fn pick(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (&i, &p) in self.indices.iter().zip(&self.probs) {
            acc += p;
            if u < acc {
                return i;
            }
        }
        *self.indices.last().expect("non-empty nucleus")
    }
}

/// Smallest prefix of the probability-descending order (ties by index)
/// whose mass reaches `p`. Zero-probability entries are never kept.
pub fn nucleus_filter(probs: &[f64], p: f64) -> Nucleus {
    let mut order: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] > 0.0).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut keep = order.len();
    if p < 1.0 {
        let mut acc = 0.0;
        for (n, &i) in order.iter().enumerate() {
            acc += probs[i];
            if acc >= p {
                keep = n + 1;
                break;
            }
        }
    }
    order.truncate(keep);
    let mass: f64 = order.iter().map(|&i| probs[i]).sum();
    let mut renorm: Vec<f64> = order.iter().map(|&i| probs[i] / mass).collect();
    // the least likely entry takes the complement so the mass is exactly 1
    if let Some((last, rest)) = renorm.split_last_mut() {
        *last = (1.0 - rest.iter().sum::<f64>()).max(0.0);
    }
    Nucleus {
        indices: order,
        probs: renorm,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn three_token_example() {
        let n = nucleus_filter(&[0.5, 0.3, 0.2], 0.7);
        assert_eq!(n.indices, vec![0, 1]);
        assert_eq!(n.probs, vec![0.625, 0.375]);
    }

    #[test]
    fn full_mass_keeps_support() {
        let probs = [0.1, 0.0, 0.6, 0.3];
        let n = nucleus_filter(&probs, 1.0);
        assert_eq!(n.indices, vec![2, 3, 0]);
        for (&i, &q) in n.indices.iter().zip(&n.probs) {
            assert!((q - probs[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn tiny_mass_is_argmax_with_index_ties() {
        assert_eq!(nucleus_filter(&[0.2, 0.5, 0.3], 1e-12).indices, vec![1]);
        assert_eq!(nucleus_filter(&[0.4, 0.2, 0.4], 1e-12).indices, vec![0]);
        assert_eq!(nucleus_filter(&[0.25; 4], 0.5).indices, vec![0, 1]);
    }

    #[test]
    fn pick_walks_the_cumulative_mass() {
        let n = nucleus_filter(&[0.5, 0.3, 0.2], 0.7);
        assert_eq!(n.pick(0.0), 0);
        assert_eq!(n.pick(0.6), 0);
        assert_eq!(n.pick(0.63), 1);
        assert_eq!(n.pick(0.999_999), 1);
    }

    fn distribution() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, 1..40).prop_filter_map("non-zero mass", |w| {
            let s: f64 = w.iter().sum();
            (s > 1e-6).then(|| w.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn nucleus_is_minimal_and_dominant(probs in distribution(), p in 0.001f64..=1.0) {
            let n = nucleus_filter(&probs, p);
            prop_assert!(!n.is_empty());
            let kept: f64 = n.indices.iter().map(|&i| probs[i]).sum();
            prop_assert!(kept >= p - 1e-9);
            let smallest = n.indices.iter().map(|&i| probs[i]).fold(f64::INFINITY, f64::min);
            let excluded = (0..probs.len())
                .filter(|i| !n.indices.contains(i))
                .map(|i| probs[i])
                .fold(0.0, f64::max);
            prop_assert!(smallest >= excluded);
            // dropping the least likely kept token falls short of p
            if p < 1.0 && n.len() > 1 {
                prop_assert!(kept - smallest < p + 1e-12);
            }
            let total: f64 = n.probs.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }
    }
}
