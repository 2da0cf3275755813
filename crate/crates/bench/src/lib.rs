//! Shared fixtures for the decode benchmarks in `benches/`.

use cpl_core::experiment::bench::forced_length_model;
use cpl_core::model::{CplModel, SelectionState};

/// Candidate counts and forced selection sizes swept by the benchmarks.
pub const KS: [usize; 4] = [256, 512, 1024, 2048];
pub const SIZES: [usize; 4] = [8, 16, 32, 64];

pub fn model(k: usize) -> CplModel {
    forced_length_model(k, 0)
}

/// The selection order greedy decoding takes, and the state just before the
/// last step of it.
pub fn last_step(model: &CplModel, size: usize) -> (usize, SelectionState) {
    let order = model.greedy_decode(size).indices;
    let (&last, prefix) = order.split_last().expect("size is positive");
    let mut state = model.init_state();
    for &j in prefix {
        model.advance_in_place(&mut state, j).expect("greedy order");
    }
    (last, state)
}
