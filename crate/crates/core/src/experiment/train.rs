//! Mini-batch training of the selection head and of the unary baselines,
//! with per-epoch validation and best-checkpoint selection.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::data::{InputSpec, Prepared, Task};
use super::eval::{evaluate_prepared, selection_score, unary_probs, EvalOptions, Method};
use crate::baselines::{hungarian_training_targets, MatchCostWeights};
use crate::error::{Error, Result};
use crate::featurizer::{featurize, unary_scores, FeaturizerDims, FeaturizerGrads, FeaturizerNets};
use crate::seed::{rng_for, stream};
use crate::training::{
    accumulate_grads, adam_step_nets, backprop_featurizer, optimizer_for, ordered_loss, permutation_averaged_loss,
    unordered_loss, AdamConfig, OrderedTarget, UnorderedTarget,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Ordered,
    Unordered,
    PermAveraged,
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Ordered => "ordered",
            Objective::Unordered => "unordered",
            Objective::PermAveraged => "perm_averaged",
        })
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ordered" => Ok(Objective::Ordered),
            "unordered" => Ok(Objective::Unordered),
            "perm_averaged" => Ok(Objective::PermAveraged),
            _ => Err(Error::InvalidConfig(format!("unknown objective '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub method: Method,
    pub objective: Objective,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(flatten)]
    pub adam: AdamConfig,
    pub num_contexts: usize,
    pub num_perms: usize,
    pub early_eos_weight: f64,
    pub final_eos_weight: f64,
    pub hidden: usize,
    pub d_h: usize,
    /// Fourier feature pairs lifting subset embeddings or path cell
    /// positions; 0 disables the lift.
    pub fourier_pairs: usize,
    pub lengthscale: f64,
    /// Decode cap; also normalizes the path depth feature.
    pub max_steps: usize,
    /// Positive-class weight of the unary baselines; `None` uses each batch's
    /// negative-to-positive ratio.
    pub pos_weight: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_task(Task::Subset)
    }
}

impl TrainConfig {
    pub fn for_task(task: Task) -> Self {
        let base = Self {
            method: Method::Cpl,
            objective: Objective::PermAveraged,
            epochs: 40,
            batch_size: 16,
            adam: AdamConfig {
                lr: 5e-3,
                ..AdamConfig::default()
            },
            num_contexts: 4,
            num_perms: 10,
            early_eos_weight: 5.0,
            final_eos_weight: 1.0,
            hidden: 32,
            d_h: 64,
            fourier_pairs: 64,
            lengthscale: 12.0,
            max_steps: 20,
            pos_weight: None,
            seed: 0,
        };
        match task {
            Task::Subset => base,
            Task::Path => Self {
                objective: Objective::Ordered,
                epochs: 30,
                d_h: 32,
                fourier_pairs: 32,
                lengthscale: 2.0,
                max_steps: 64,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !self.method.needs_checkpoint() {
            return bad(&format!("method {} has no trainable parameters", self.method));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if self.num_contexts == 0 || self.num_perms == 0 {
            return bad("num_contexts and num_perms must be positive");
        }
        if self.hidden == 0 || self.d_h == 0 || self.max_steps == 0 {
            return bad("hidden, d_h and max_steps must be positive");
        }
        if !(self.adam.lr > 0.0 && self.lengthscale > 0.0) {
            return bad("lr and lengthscale must be positive");
        }
        if self.pos_weight.is_some_and(|w| !(w > 0.0)) {
            return bad("pos_weight must be positive");
        }
        Ok(())
    }

    pub fn input_spec(&self, task: Task, raw_dim: usize) -> InputSpec {
        match task {
            Task::Subset => InputSpec::subset(raw_dim, self.fourier_pairs, self.lengthscale, self.seed),
            Task::Path => InputSpec::path(self.max_steps, self.fourier_pairs, self.lengthscale, self.seed),
        }
    }
}

/// Everything needed to reproduce a trained predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub task: Task,
    pub method: Method,
    pub input: InputSpec,
    pub nets: FeaturizerNets,
    /// Threshold chosen on validation data by unary methods.
    pub tau: Option<f64>,
    pub max_steps: usize,
    pub epoch: usize,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Validation CluF1 for subsets, min-HD for paths.
    pub val_metric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
}

/// Name of the per-epoch validation metric column.
pub fn val_metric_name(task: Task) -> &'static str {
    match task {
        Task::Subset => "val_clu_f1",
        Task::Path => "val_min_hd",
    }
}

/// Loss and parameter gradients of one instance under `target`.
pub fn instance_loss(
    nets: &FeaturizerNets,
    prep: &Prepared,
    target: &[usize],
    cfg: &TrainConfig,
    rng: &mut crate::seed::Rng,
) -> Result<(f64, FeaturizerGrads)> {
    if cfg.method.is_unary() {
        let positive = unary_positives(nets, prep, target, cfg.method)?;
        let pw = cfg
            .pos_weight
            .unwrap_or_else(|| balance_weight(std::slice::from_ref(&positive)));
        return unary_loss(nets, prep, &positive, pw);
    }
    let (model, cache) = featurize(nets, prep.embeddings())?;
    let k = model.k();
    let report = match cfg.objective {
        Objective::Ordered => ordered_loss(&model, &OrderedTarget::new(target.to_vec(), k)?)?,
        Objective::Unordered => unordered_loss(
            &model,
            &UnorderedTarget::new(target.to_vec(), k, false)?,
            cfg.num_contexts,
            rng,
        )?,
        Objective::PermAveraged => permutation_averaged_loss(
            &model,
            &UnorderedTarget::new(target.to_vec(), k, false)?,
            cfg.num_perms,
            cfg.early_eos_weight,
            cfg.final_eos_weight,
            rng,
        )?,
    };
    let grads = backprop_featurizer(&report.grad_theta, &report.grad_w, &cache, nets)?;
    Ok((report.loss, grads))
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Candidates a unary method is trained to switch on: the target itself for
/// thresholding, or the matched candidates for the Hungarian baseline.
pub fn unary_positives(nets: &FeaturizerNets, prep: &Prepared, target: &[usize], method: Method) -> Result<Vec<bool>> {
    if method == Method::Hungarian {
        let probs = unary_probs(nets, prep)?;
        return Ok(hungarian_training_targets(
            &probs,
            prep.points().view(),
            target,
            MatchCostWeights::default(),
        ));
    }
    let mut y = vec![false; prep.num_candidates()];
    for &t in target {
        *y.get_mut(t).ok_or(Error::IndexOutOfRange {
            index: t,
            k: prep.num_candidates(),
        })? = true;
    }
    Ok(y)
}

/// Negative-to-positive ratio over a group of label vectors.
pub fn balance_weight(labels: &[Vec<bool>]) -> f64 {
    let pos = labels.iter().flatten().filter(|&&y| y).count();
    let total: usize = labels.iter().map(Vec::len).sum();
    if pos == 0 {
        1.0
    } else {
        ((total - pos) as f64 / pos as f64).max(1.0)
    }
}

/// Weighted binary cross-entropy over candidates, averaged per candidate.
pub fn unary_loss(
    nets: &FeaturizerNets,
    prep: &Prepared,
    positive: &[bool],
    pw: f64,
) -> Result<(f64, FeaturizerGrads)> {
    let (scores, cache) = unary_scores(nets, prep.embeddings())?;
    let k = prep.num_candidates();
    let mut loss = 0.0;
    let mut dy = ndarray::Array2::zeros((k + 1, 1));
    for (j, (&z, &y)) in scores.iter().zip(positive).enumerate() {
        let p = 1.0 / (1.0 + (-z).exp());
        if y {
            loss += pw * softplus(-z);
            dy[[j, 0]] = pw * (p - 1.0) / k as f64;
        } else {
            loss += softplus(z);
            dy[[j, 0]] = p / k as f64;
        }
    }
    let mut grads = nets.zeros_like();
    nets.unary.backward_batch(&cache.mlp, &dy, &mut grads.unary);
    Ok((loss / k as f64, grads))
}

fn validation_loss(nets: &FeaturizerNets, val: &[Prepared], cfg: &TrainConfig) -> Result<f64> {
    if val.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for prep in val {
        let mut rng = rng_for(&[cfg.seed, prep.id(), stream::OBJECTIVE, u64::MAX]);
        total += instance_loss(nets, prep, &prep.target(0), cfg, &mut rng)?.0;
    }
    Ok(total / val.len() as f64)
}

/// Trains `cfg.method` on `train`, validating on `val` after every epoch, and
/// returns the checkpoint with the best validation score.
pub fn train(train: &[Prepared], val: &[Prepared], spec: &InputSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(train, val, spec, cfg, |_| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with(
    train: &[Prepared],
    val: &[Prepared],
    spec: &InputSpec,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&LogRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let Some(first) = train.first() else {
        return Err(Error::InvalidConfig("no training instances".into()));
    };
    let task = spec.task();
    let dims = FeaturizerDims {
        d: first.embeddings().d(),
        hidden: cfg.hidden,
        d_h: cfg.d_h,
    };
    let mut nets = FeaturizerNets::init(dims, &mut rng_for(&[cfg.seed, stream::INIT]));
    let mut opt = optimizer_for(&nets);
    let eval_opts = EvalOptions {
        seed: cfg.seed,
        max_steps: Some(cfg.max_steps),
        ..EvalOptions::default()
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, Checkpoint)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng_for(&[cfg.seed, stream::SHUFFLE, epoch as u64]));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = nets.zeros_like();
            let scale = 1.0 / batch.len() as f64;
            let losses: Vec<(f64, FeaturizerGrads)> = if cfg.method.is_unary() {
                let labels: Vec<Vec<bool>> = batch
                    .iter()
                    .map(|&i| unary_positives(&nets, &train[i], &train[i].target(epoch as u64), cfg.method))
                    .collect::<Result<_>>()?;
                let pw = cfg.pos_weight.unwrap_or_else(|| balance_weight(&labels));
                batch
                    .iter()
                    .zip(&labels)
                    .map(|(&i, y)| unary_loss(&nets, &train[i], y, pw))
                    .collect::<Result<_>>()?
            } else {
                batch
                    .iter()
                    .map(|&i| {
                        let prep = &train[i];
                        let mut rng = rng_for(&[cfg.seed, prep.id(), stream::OBJECTIVE, epoch as u64]);
                        instance_loss(&nets, prep, &prep.target(epoch as u64), cfg, &mut rng)
                    })
                    .collect::<Result<_>>()?
            };
            for (loss, g) in &losses {
                if !loss.is_finite() {
                    return Err(Error::DivergedLoss(epoch));
                }
                epoch_loss += loss;
                accumulate_grads(&mut grads, g, scale);
            }
            adam_step_nets(&mut opt, &mut nets, &grads, cfg.adam)?;
        }
        let train_loss = epoch_loss / train.len() as f64;

        let mut ck = Checkpoint {
            task,
            method: cfg.method,
            input: spec.clone(),
            nets: nets.clone(),
            tau: None,
            max_steps: cfg.max_steps,
            epoch,
        };
        let val_loss = validation_loss(&nets, val, cfg)?;
        if !val_loss.is_finite() {
            return Err(Error::DivergedLoss(epoch));
        }
        let (score, val_metric) = if val.is_empty() {
            (-train_loss, f64::NAN)
        } else {
            let eval = evaluate_prepared(cfg.method, Some(&ck), val, &eval_opts)?;
            ck.tau = eval.tau;
            let s = selection_score(&eval.results);
            (s, if task == Task::Path { -s } else { s })
        };
        let row = LogRow {
            epoch,
            train_loss,
            val_loss,
            val_metric,
        };
        on_epoch(&row);
        log.push(row);
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, ck));
        }
    }
    let (_, checkpoint) = best.expect("at least one epoch");
    Ok(TrainOutcome { checkpoint, log })
}
