//! Comparison paradigms: independent thresholding, matching-based set
//! prediction, and oracle-k clustering.

pub mod assignment;
pub mod kmeans;
pub mod targets;

pub use assignment::{
    expected_matching_cost, hungarian_assign, set_matching_cost, Assignment, CostMatrix,
    ModeDistribution,
};
pub use kmeans::{kmeans_representatives, lloyd, KMeansConfig, LloydRun};
pub use targets::{hungarian_training_targets, MatchCostWeights};

/// Threshold grid swept when decoding unary baselines.
pub const THRESHOLD_SWEEP: [f64; 10] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95];

/// Indices whose score is strictly greater than `tau`.
pub fn threshold_select(scores: &[f64], tau: f64) -> Vec<usize> {
    scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > tau)
        .map(|(i, _)| i)
        .collect()
}
