//! Finite-difference verification of every objective and of the full
//! featurizer chain, with a step-size sweep and a fault-injection hook.

use ndarray::{Array2, ShapeBuilder};
use rand::Rng;
use serde::Serialize;

use crate::error::Result;
use crate::featurizer::{backprop_featurizer, featurize, ElementEmbeddings, FeaturizerDims, FeaturizerNets};
use crate::model::CplModel;
use crate::seed::{rng_for, Rng as SeedRng};
use crate::training::{
    finite_difference_check, masked_ce_step, ordered_loss, permutation_averaged_loss, unordered_loss, LossReport,
    OrderedTarget, UnorderedTarget,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckConfig {
    pub eps: f64,
    /// Coordinates probed per check.
    pub samples: usize,
    pub seed: u64,
    pub k: usize,
    pub dims: FeaturizerDims,
    /// Step sizes tried on the featurizer chain.
    pub sweep: Vec<f64>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            samples: 80,
            seed: 0,
            k: 7,
            dims: FeaturizerDims { d: 5, hidden: 6, d_h: 4 },
            sweep: vec![1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8],
        }
    }
}

/// Deliberate gradient corruption used to show the checker catches bugs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum Fault {
    #[default]
    None,
    /// Negates the interaction-matrix gradient.
    FlipGradW,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRow {
    pub name: &'static str,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub eps: f64,
    pub rows: Vec<CheckRow>,
    /// `(eps, max relative error)` on the featurizer chain.
    pub sweep: Vec<(f64, f64)>,
}

impl GradcheckReport {
    pub fn max_error(&self) -> f64 {
        self.rows.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.max_error() < tol
    }

    /// Sweep step size with the smallest error.
    pub fn best_eps(&self) -> Option<f64> {
        self.sweep
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|&(eps, _)| eps)
    }
}

/// Parameters of a model as `theta ++ W[..k, ..k]` (row-major).
fn flatten(model: &CplModel) -> Vec<f64> {
    let k = model.k();
    let mut flat = model.theta().to_vec();
    for j in 0..k {
        for i in 0..k {
            flat.push(model.w()[[j, i]]);
        }
    }
    flat
}

fn unflatten(flat: &[f64], k: usize) -> CplModel {
    let mut w = Array2::zeros((k + 1, k + 1).f());
    for j in 0..k {
        for i in 0..k {
            w[[j, i]] = flat[k + 1 + j * k + i];
        }
    }
    CplModel::new(flat[..=k].to_vec(), w).expect("finite parameters")
}

fn report_gradient(report: &LossReport, fault: Fault) -> Vec<f64> {
    let k = report.k();
    let sign = if fault == Fault::FlipGradW { -1.0 } else { 1.0 };
    let mut flat = report.grad_theta.clone();
    for j in 0..k {
        for i in 0..k {
            flat.push(sign * report.grad_w[[j, i]]);
        }
    }
    flat
}

fn random_model(k: usize, rng: &mut SeedRng) -> CplModel {
    let theta = (0..=k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut w = Array2::zeros((k + 1, k + 1).f());
    for j in 0..k {
        for i in 0..k {
            w[[j, i]] = rng.random_range(-1.0..1.0);
        }
    }
    CplModel::new(theta, w).expect("finite parameters")
}

type Objective = Box<dyn Fn(&CplModel) -> Result<LossReport>>;

fn model_objectives(k: usize, seed: u64) -> Result<Vec<(&'static str, Objective)>> {
    let ordered = OrderedTarget::new(vec![3, 0, k - 2], k)?;
    let set = UnorderedTarget::new(vec![1, 3, 4], k, false)?;
    let set2 = set.clone();
    Ok(vec![
        (
            "masked_ce_step",
            Box::new(move |m: &CplModel| {
                let step = masked_ce_step(m, &[0, 2], &[(1, 0.3), (4, 0.5), (k, 0.2)])?;
                let mut r = LossReport::zeros(m.k());
                r.add_step(&[0, 2], &step, 1.0);
                Ok(r)
            }),
        ),
        ("ordered_loss", Box::new(move |m: &CplModel| ordered_loss(m, &ordered))),
        (
            "unordered_loss",
            Box::new(move |m: &CplModel| unordered_loss(m, &set, 6, &mut rng_for(&[seed, 1]))),
        ),
        (
            "permutation_averaged_loss",
            Box::new(move |m: &CplModel| permutation_averaged_loss(m, &set2, 4, 5.0, 1.0, &mut rng_for(&[seed, 2]))),
        ),
    ])
}

fn featurizer_check(cfg: &GradcheckConfig, eps: f64, fault: Fault) -> Result<f64> {
    let mut rng = rng_for(&[cfg.seed, 3]);
    let nets = FeaturizerNets::init(cfg.dims, &mut rng);
    let q = Array2::from_shape_simple_fn((cfg.k, cfg.dims.d), || rng.random_range(-1.0..1.0));
    let emb = ElementEmbeddings::new(q)?;
    let target = UnorderedTarget::new(vec![0, 2, 5.min(cfg.k - 1)], cfg.k, false)?;
    let loss_of = |n: &FeaturizerNets| -> Result<(LossReport, crate::featurizer::ForwardCache)> {
        let (model, cache) = featurize(n, &emb)?;
        Ok((unordered_loss(&model, &target, 6, &mut rng_for(&[cfg.seed, 4]))?, cache))
    };
    let (mut report, cache) = loss_of(&nets)?;
    if fault == Fault::FlipGradW {
        report.grad_w.mapv_inplace(|g| -g);
    }
    let analytic = backprop_featurizer(&report.grad_theta, &report.grad_w, &cache, &nets)?.to_flat();
    let params = nets.to_flat();
    let mut probe = nets.clone();
    Ok(finite_difference_check(
        |p| {
            probe.set_flat(p).expect("same layout");
            loss_of(&probe).expect("valid probe").0.loss
        },
        &params,
        &analytic,
        eps,
        cfg.samples,
        &mut rng_for(&[cfg.seed, 5]),
    ))
}

pub fn run_gradcheck(cfg: &GradcheckConfig, fault: Fault) -> Result<GradcheckReport> {
    let mut rng = rng_for(&[cfg.seed, 0]);
    let model = random_model(cfg.k, &mut rng);
    let params = flatten(&model);
    let mut rows = Vec::new();
    for (name, objective) in model_objectives(cfg.k, cfg.seed)? {
        let analytic = report_gradient(&objective(&model)?, fault);
        let err = finite_difference_check(
            |p| objective(&unflatten(p, cfg.k)).expect("valid probe").loss,
            &params,
            &analytic,
            cfg.eps,
            cfg.samples,
            &mut rng,
        );
        rows.push(CheckRow { name, max_rel_err: err });
    }
    rows.push(CheckRow {
        name: "featurizer_chain",
        max_rel_err: featurizer_check(cfg, cfg.eps, fault)?,
    });
    let sweep = cfg
        .sweep
        .iter()
        .map(|&eps| Ok((eps, featurizer_check(cfg, eps, Fault::None)?)))
        .collect::<Result<_>>()?;
    Ok(GradcheckReport {
        eps: cfg.eps,
        rows,
        sweep,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_check_passes() {
        let report = run_gradcheck(&GradcheckConfig::default(), Fault::None).unwrap();
        assert_eq!(report.rows.len(), 5);
        assert!(report.passed(1e-4), "{report:?}");
    }

    #[test]
    fn flipped_interaction_gradient_is_caught() {
        let report = run_gradcheck(&GradcheckConfig::default(), Fault::FlipGradW).unwrap();
        assert!(!report.passed(1e-4));
        let masked = report.rows.iter().find(|r| r.name == "masked_ce_step").unwrap();
        assert!(masked.max_rel_err > 1.0);
    }

    #[test]
    fn sweep_minimum_is_interior() {
        let report = run_gradcheck(&GradcheckConfig::default(), Fault::None).unwrap();
        let best = report.best_eps().unwrap();
        assert!(best > 1e-6 && best < 1e-3, "{:?}", report.sweep);
        let at = |e: f64| report.sweep.iter().find(|s| s.0 == e).unwrap().1;
        assert!(at(1e-2) > at(1e-5));
    }

    #[test]
    fn flatten_round_trips() {
        let model = random_model(4, &mut rng_for(&[1]));
        assert_eq!(unflatten(&flatten(&model), 4), model);
    }
}
