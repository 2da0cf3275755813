//! Matching-based target construction for the Hungarian set-prediction baseline.

use ndarray::{Array2, ArrayView2};

use super::assignment::{hungarian_assign, CostMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchCostWeights {
    pub classification: f64,
    pub distance: f64,
}

impl Default for MatchCostWeights {
    fn default() -> Self {
        Self {
            classification: 10.0,
            distance: 0.01,
        }
    }
}

// Cost added to a representative's own candidate; large enough that the
// solver only takes it when no other perfect matching exists.
const IDENTITY_PENALTY: f64 = 1e9;

/// Per-candidate binary targets from a representative-to-candidate matching.
///
/// The cost of assigning representative `r` to candidate `c` is
/// `classification * (-probs[c]) + distance * |x_c - x_r|^2`. Self-matches are
/// excluded whenever there are more candidates than representatives.
pub fn hungarian_training_targets(
    probs: &[f64],
    embeddings: ArrayView2<'_, f64>,
    representatives: &[usize],
    weights: MatchCostWeights,
) -> Vec<bool> {
    let n = probs.len();
    let mut positive = vec![false; n];
    if representatives.is_empty() {
        return positive;
    }
    let exclude_identity = n > representatives.len();
    let costs = Array2::from_shape_fn((representatives.len(), n), |(r, c)| {
        let rep = representatives[r];
        let d2: f64 = embeddings
            .row(c)
            .iter()
            .zip(embeddings.row(rep))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let mut cost = -weights.classification * probs[c] + weights.distance * d2;
        if exclude_identity && c == rep {
            cost += IDENTITY_PENALTY;
        }
        cost
    });
    let assignment = hungarian_assign(&CostMatrix::new(costs).expect("finite costs"));
    for (_, c) in assignment.pairs {
        positive[c] = true;
    }
    positive
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn full_representative_set_marks_everything() {
        let x = array![[0.0, 0.0], [1.0, 0.0], [5.0, 5.0]];
        let t = hungarian_training_targets(&[0.2, 0.9, 0.4], x.view(), &[0, 1, 2], Default::default());
        assert_eq!(t, vec![true; 3]);
    }

    #[test]
    fn separated_clusters_get_one_positive_each() {
        let x = array![
            [-10.0, 0.0],
            [-10.5, 0.3],
            [-9.7, -0.2],
            [10.0, 0.0],
            [10.2, 0.4],
            [9.6, -0.1]
        ];
        let probs = [0.5; 6];
        let w = MatchCostWeights {
            classification: 10.0,
            distance: 1.0,
        };
        let t = hungarian_training_targets(&probs, x.view(), &[0, 3], w);
        let left = t[..3].iter().filter(|&&b| b).count();
        let right = t[3..].iter().filter(|&&b| b).count();
        assert_eq!((left, right), (1, 1));
        // identity matches are excluded
        assert!(!t[0] && !t[3]);
    }

    #[test]
    fn zero_distance_weight_follows_classification_cost() {
        let mut rng = rng_for(&[8]);
        for _ in 0..20 {
            let probs: Vec<f64> = (0..5).map(|_| rng.random::<f64>()).collect();
            let x = Array2::from_shape_fn((5, 3), |_| rng.random_range(-3.0..3.0));
            let reps = [1usize, 3];
            let w = MatchCostWeights {
                classification: 10.0,
                distance: 0.0,
            };
            let t = hungarian_training_targets(&probs, x.view(), &reps, w);
            // brute force over ordered candidate pairs avoiding self-matches
            let mut best = (f64::INFINITY, (0, 0));
            for a in 0..5 {
                for b in 0..5 {
                    if a == b || a == reps[0] || b == reps[1] {
                        continue;
                    }
                    let c = -10.0 * (probs[a] + probs[b]);
                    if c < best.0 {
                        best = (c, (a, b));
                    }
                }
            }
            let mut expected = vec![false; 5];
            expected[best.1 .0] = true;
            expected[best.1 .1] = true;
            assert_eq!(t, expected);
        }
    }
}
