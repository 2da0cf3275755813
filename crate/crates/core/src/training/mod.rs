//! Objectives, optimizer and gradient verification for training the selection head.

pub mod adam;
pub mod gradcheck;
pub mod objectives;

pub use crate::featurizer::backprop_featurizer;
pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use gradcheck::{finite_difference_check, relative_error};
pub use objectives::{
    context_step, masked_ce_step, ordered_loss, permutation_averaged_loss, sample_context, unordered_loss,
    LossReport, OrderedTarget, StepGrad, UnorderedTarget,
};

use crate::featurizer::{FeaturizerGrads, FeaturizerNets};
use crate::error::Result;

/// Adam update of every network tensor.
pub fn adam_step_nets(
    opt: &mut OptimizerState,
    nets: &mut FeaturizerNets,
    grads: &FeaturizerGrads,
    cfg: AdamConfig,
) -> Result<()> {
    let grads: Vec<&[f64]> = grads.tensors().into_iter().map(|(_, t)| t).collect();
    adam_step(opt, &mut nets.tensors_mut(), &grads, cfg)
}

/// Fresh optimizer state sized for `nets`.
pub fn optimizer_for(nets: &FeaturizerNets) -> OptimizerState {
    let sizes: Vec<usize> = nets.tensors().iter().map(|(_, t)| t.len()).collect();
    OptimizerState::new(&sizes)
}

/// `into += scale * grads`, tensor by tensor.
pub fn accumulate_grads(into: &mut FeaturizerGrads, grads: &FeaturizerGrads, scale: f64) {
    for (dst, (_, src)) in into.tensors_mut().into_iter().zip(grads.tensors()) {
        for (d, s) in dst.iter_mut().zip(src) {
            *d += scale * s;
        }
    }
}
