//! Decoding with every method and scoring predictions against the benchmark metrics.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::data::{Instance, InputSpec, Prepared, Task};
use super::train::Checkpoint;
use crate::baselines::{kmeans_representatives, threshold_select, KMeansConfig, THRESHOLD_SWEEP};
use crate::benchgen::PathInstance;
use crate::error::{Error, Result};
use crate::featurizer::{featurize, unary_scores, FeaturizerNets};
use crate::metrics::{
    cluster_metrics, path_metrics, stratify_by_paths, summarize_clusters, summarize_paths, ClusterMetrics,
    ClusterSummary, PathMetrics, PathSummary,
};
use crate::seed::{rng_for, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Cpl,
    Threshold,
    Hungarian,
    Kmeans,
    RecomputeRef,
    /// The instance's own sampled target.
    Oracle,
    /// Always predicts nothing.
    Empty,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Cpl,
        Method::Threshold,
        Method::Hungarian,
        Method::Kmeans,
        Method::RecomputeRef,
        Method::Oracle,
        Method::Empty,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Cpl => "cpl",
            Method::Threshold => "threshold",
            Method::Hungarian => "hungarian",
            Method::Kmeans => "kmeans",
            Method::RecomputeRef => "recompute_ref",
            Method::Oracle => "oracle",
            Method::Empty => "empty",
        }
    }

    /// Methods whose predictions come from a trained checkpoint.
    pub fn needs_checkpoint(self) -> bool {
        matches!(
            self,
            Method::Cpl | Method::RecomputeRef | Method::Threshold | Method::Hungarian
        )
    }

    /// Independent per-candidate scoring followed by a probability threshold.
    pub fn is_unary(self) -> bool {
        matches!(self, Method::Threshold | Method::Hungarian)
    }

    pub fn is_sequential(self) -> bool {
        matches!(self, Method::Cpl | Method::RecomputeRef)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Metrics {
    Path(PathMetrics),
    Cluster(ClusterMetrics),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceResult {
    pub instance_id: u64,
    /// Candidate indices in selection order.
    pub prediction: Vec<usize>,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodEval {
    pub method: Method,
    /// Threshold used by unary methods.
    pub tau: Option<f64>,
    pub results: Vec<InstanceResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub seed: u64,
    /// Overrides the checkpoint's decode cap.
    pub max_steps: Option<usize>,
    /// Sweep thresholds on the evaluated data instead of using the checkpoint's.
    pub sweep: bool,
    pub kmeans: KMeansConfig,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            max_steps: None,
            sweep: true,
            kmeans: KMeansConfig::default(),
        }
    }
}

pub fn score(prep: &Prepared, pred: &[usize]) -> Result<Metrics> {
    match prep {
        Prepared::Subset { inst, .. } => Ok(Metrics::Cluster(cluster_metrics(
            pred,
            &inst.cluster_labels,
            inst.num_clusters,
        )?)),
        Prepared::Path { inst, cand } => {
            if let Some(&bad) = pred.iter().find(|&&i| i >= cand.len()) {
                return Err(Error::IndexOutOfRange { index: bad, k: cand.len() });
            }
            Ok(Metrics::Path(path_metrics(&cand.decode(pred), inst)))
        }
    }
}

/// Higher is better: mean CluF1 for subsets, negated mean min-HD for paths.
pub fn selection_score(results: &[InstanceResult]) -> f64 {
    if results.is_empty() {
        return f64::NEG_INFINITY;
    }
    let total: f64 = results
        .iter()
        .map(|r| match r.metrics {
            Metrics::Cluster(m) => m.clu_f1,
            Metrics::Path(m) => -m.min_hd,
        })
        .sum();
    total / results.len() as f64
}

pub fn decode_cpl(nets: &FeaturizerNets, prep: &Prepared, max_steps: usize, recompute: bool) -> Result<Vec<usize>> {
    let (model, _) = featurize(nets, prep.embeddings())?;
    let path = if recompute {
        model.decode_recompute(max_steps)
    } else {
        model.greedy_decode(max_steps)
    };
    Ok(path.indices)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Per-candidate selection probabilities of a unary scorer.
pub fn unary_probs(nets: &FeaturizerNets, prep: &Prepared) -> Result<Vec<f64>> {
    let (mut theta, _) = unary_scores(nets, prep.embeddings())?;
    theta.pop();
    Ok(theta.into_iter().map(sigmoid).collect())
}

fn results_for(data: &[Prepared], preds: Vec<Vec<usize>>) -> Result<Vec<InstanceResult>> {
    data.iter()
        .zip(preds)
        .map(|(prep, prediction)| {
            Ok(InstanceResult {
                instance_id: prep.id(),
                metrics: score(prep, &prediction)?,
                prediction,
            })
        })
        .collect()
}

/// Best threshold over the sweep grid by [`selection_score`]; the lowest
/// threshold wins ties.
pub fn sweep_thresholds(data: &[Prepared], probs: &[Vec<f64>], taus: &[f64]) -> Result<(f64, Vec<InstanceResult>)> {
    let mut best: Option<(f64, f64, Vec<InstanceResult>)> = None;
    for &tau in taus {
        let preds = probs.iter().map(|p| threshold_select(p, tau)).collect();
        let results = results_for(data, preds)?;
        let s = selection_score(&results);
        if best.as_ref().is_none_or(|(b, _, _)| s > *b) {
            best = Some((s, tau, results));
        }
    }
    let (_, tau, results) = best.ok_or_else(|| Error::InvalidConfig("empty threshold sweep".into()))?;
    Ok((tau, results))
}

fn checkpoint_for(method: Method, ck: Option<&Checkpoint>) -> Result<&Checkpoint> {
    let ck = ck.ok_or_else(|| Error::InvalidConfig(format!("method {method} needs a checkpoint")))?;
    let compatible = if method.is_sequential() {
        ck.method.is_sequential()
    } else {
        ck.method.is_unary()
    };
    if !compatible {
        return Err(Error::InvalidConfig(format!(
            "checkpoint was trained with {} and cannot drive {method}",
            ck.method
        )));
    }
    Ok(ck)
}

/// Input encoding used when no checkpoint fixes one.
pub fn default_input(task: Task) -> InputSpec {
    match task {
        Task::Subset => InputSpec::Subset {
            encoding: super::features::SubsetEncoding::Raw,
        },
        Task::Path => InputSpec::path(64, 0, 1.0, 0),
    }
}

/// Prepares `instances` with the encoding `method` requires and evaluates it.
pub fn evaluate(
    method: Method,
    ck: Option<&Checkpoint>,
    instances: &[Instance],
    opts: &EvalOptions,
) -> Result<MethodEval> {
    let Some(first) = instances.first() else {
        return Ok(MethodEval {
            method,
            tau: None,
            results: Vec::new(),
        });
    };
    let task = match first {
        Instance::Subset(_) => Task::Subset,
        Instance::Path(_) => Task::Path,
    };
    let spec = match (method.needs_checkpoint(), ck) {
        (true, Some(ck)) => ck.input.clone(),
        _ => default_input(task),
    };
    let data: Vec<Prepared> = instances
        .iter()
        .map(|i| Prepared::new(i.clone(), &spec))
        .collect::<Result<_>>()?;
    evaluate_prepared(method, ck, &data, opts)
}

pub fn evaluate_prepared(
    method: Method,
    ck: Option<&Checkpoint>,
    data: &[Prepared],
    opts: &EvalOptions,
) -> Result<MethodEval> {
    let mut tau = None;
    let preds: Vec<Vec<usize>> = match method {
        Method::Cpl | Method::RecomputeRef => {
            let ck = checkpoint_for(method, ck)?;
            let steps = opts.max_steps.unwrap_or(ck.max_steps);
            data.iter()
                .map(|p| decode_cpl(&ck.nets, p, steps, method == Method::RecomputeRef))
                .collect::<Result<_>>()?
        }
        Method::Threshold | Method::Hungarian => {
            let ck = checkpoint_for(method, ck)?;
            let probs: Vec<Vec<f64>> = data.iter().map(|p| unary_probs(&ck.nets, p)).collect::<Result<_>>()?;
            let (t, results) = match (opts.sweep, ck.tau) {
                (false, Some(t)) => (t, results_for(data, probs.iter().map(|p| threshold_select(p, t)).collect())?),
                _ => sweep_thresholds(data, &probs, &THRESHOLD_SWEEP)?,
            };
            return Ok(MethodEval {
                method,
                tau: Some(t),
                results,
            });
        }
        Method::Kmeans => data
            .iter()
            .map(|p| match p {
                Prepared::Subset { inst, .. } => {
                    let mut rng = rng_for(&[opts.seed, inst.id, stream::KMEANS]);
                    kmeans_representatives(inst.embeddings.view(), inst.num_clusters, &mut rng, opts.kmeans)
                }
                Prepared::Path { .. } => Err(Error::InvalidConfig("kmeans applies to the subset task only".into())),
            })
            .collect::<Result<_>>()?,
        Method::Oracle => data.iter().map(|p| p.target(0)).collect(),
        Method::Empty => vec![Vec::new(); data.len()],
    };
    if method.is_unary() {
        tau = ck.and_then(|c| c.tau);
    }
    Ok(MethodEval {
        method,
        tau,
        results: results_for(data, preds)?,
    })
}

/// Whether every predicted cell lies on one valid path. Empty predictions do not count.
pub fn within_single_branch(cells: &[(usize, usize)], inst: &PathInstance) -> bool {
    !cells.is_empty()
        && inst.valid_paths.iter().any(|p| {
            let on_path: HashSet<_> = p.iter().collect();
            cells.iter().all(|c| on_path.contains(c))
        })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathEvalSummary {
    pub overall: PathSummary,
    pub by_n_paths: BTreeMap<usize, PathSummary>,
    /// Mean over instances with at least two valid paths.
    pub multi_path: PathSummary,
    /// Fraction of two-path instances whose prediction stays on one branch.
    pub single_branch_two_mode: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Summary {
    Path(PathEvalSummary),
    Cluster(ClusterSummary),
}

pub fn summarize(eval: &MethodEval, data: &[Prepared]) -> Summary {
    let clusters: Vec<ClusterMetrics> = eval
        .results
        .iter()
        .filter_map(|r| match r.metrics {
            Metrics::Cluster(m) => Some(m),
            Metrics::Path(_) => None,
        })
        .collect();
    if !clusters.is_empty() || eval.results.is_empty() {
        return Summary::Cluster(summarize_clusters(&clusters));
    }
    let rows: Vec<PathMetrics> = eval
        .results
        .iter()
        .filter_map(|r| match r.metrics {
            Metrics::Path(m) => Some(m),
            Metrics::Cluster(_) => None,
        })
        .collect();
    let by_id: BTreeMap<u64, &Prepared> = data.iter().map(|p| (p.id(), p)).collect();
    let (mut two, mut single) = (0usize, 0usize);
    for r in &eval.results {
        if let Some(Prepared::Path { inst, cand }) = by_id.get(&r.instance_id) {
            if inst.n_paths() == 2 {
                two += 1;
                single += usize::from(within_single_branch(&cand.decode(&r.prediction), inst));
            }
        }
    }
    Summary::Path(PathEvalSummary {
        overall: summarize_paths(&rows),
        by_n_paths: stratify_by_paths(&rows),
        multi_path: summarize_paths(rows.iter().filter(|m| m.n_paths >= 2)),
        single_branch_two_mode: if two == 0 { 0.0 } else { single as f64 / two as f64 },
    })
}
