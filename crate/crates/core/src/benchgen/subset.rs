//! Gaussian-blob bags with latent clusters and resampled one-per-cluster targets.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{rng_for, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubsetConfig {
    pub min_clusters: usize,
    pub max_clusters: usize,
    pub min_cluster_size: usize,
    pub max_cluster_size: usize,
    /// Bags larger than this are subsampled; clusters that vanish are dropped.
    pub cap: usize,
    pub dim: usize,
    pub sigma: f64,
    /// Expected inter-center distance in units of `sigma`.
    pub separation: f64,
}

impl Default for SubsetConfig {
    fn default() -> Self {
        Self {
            min_clusters: 3,
            max_clusters: 10,
            min_cluster_size: 12,
            max_cluster_size: 40,
            cap: 160,
            dim: 16,
            sigma: 1.0,
            separation: 30.0,
        }
    }
}

impl SubsetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.min_clusters == 0 || self.min_clusters > self.max_clusters {
            return bad("cluster range must satisfy 1 <= min <= max");
        }
        if self.min_cluster_size == 0 || self.min_cluster_size > self.max_cluster_size {
            return bad("cluster size range must satisfy 1 <= min <= max");
        }
        if self.cap == 0 || self.dim == 0 {
            return bad("cap and dim must be positive");
        }
        if !(self.sigma > 0.0) || !(self.separation >= 0.0) {
            return bad("sigma must be positive and separation non-negative");
        }
        Ok(())
    }

    /// Side of the centering cube. Two uniform points in `[0, s]^d` are about
    /// `s * sqrt(d / 6)` apart; the 5% margin keeps the expectation above target.
    fn cube_side(&self) -> f64 {
        1.05 * self.separation * self.sigma / (self.dim as f64 / 6.0).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetInstance {
    pub id: u64,
    pub seed: u64,
    pub embeddings: Array2<f64>,
    pub cluster_labels: Vec<usize>,
    pub num_clusters: usize,
    pub sampled_target: Vec<usize>,
}

impl SubsetInstance {
    pub fn len(&self) -> usize {
        self.cluster_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cluster_labels.is_empty()
    }

    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.num_clusters];
        for (i, &c) in self.cluster_labels.iter().enumerate() {
            m[c].push(i);
        }
        m
    }

    /// Deterministic target draw for a given epoch (epoch 0 is the stored draw).
    pub fn target_for_epoch(&self, epoch: u64) -> Vec<usize> {
        let mut rng = rng_for(&[self.seed, self.id, stream::TARGET, epoch]);
        resample_supervision(self, &mut rng)
    }

    /// Rebuilds an instance from stored fields, re-drawing its target.
    pub fn from_parts(
        id: u64,
        seed: u64,
        embeddings: Array2<f64>,
        cluster_labels: Vec<usize>,
        num_clusters: usize,
    ) -> Result<Self> {
        if embeddings.nrows() != cluster_labels.len() {
            return Err(Error::ShapeMismatch("labels and embeddings disagree".into()));
        }
        let mut present = vec![false; num_clusters];
        for &c in &cluster_labels {
            if c >= num_clusters {
                return Err(Error::InvalidConfig(format!("label {c} >= k = {num_clusters}")));
            }
            present[c] = true;
        }
        if present.iter().any(|p| !p) {
            return Err(Error::InvalidConfig("every cluster label must appear".into()));
        }
        let mut inst = Self {
            id,
            seed,
            embeddings,
            cluster_labels,
            num_clusters,
            sampled_target: Vec::new(),
        };
        inst.sampled_target = inst.target_for_epoch(0);
        Ok(inst)
    }
}

pub fn gen_subset_instance(cfg: &SubsetConfig, seed: u64, id: u64) -> Result<SubsetInstance> {
    cfg.validate()?;
    let mut rng = rng_for(&[seed, id, stream::INSTANCE]);
    let k = rng.random_range(cfg.min_clusters..=cfg.max_clusters);
    let side = cfg.cube_side();
    let noise = Normal::new(0.0, cfg.sigma).expect("sigma validated");
    let mut points: Vec<(usize, Vec<f64>)> = Vec::new();
    for c in 0..k {
        let center: Vec<f64> = (0..cfg.dim).map(|_| rng.random_range(0.0..=side)).collect();
        let size = rng.random_range(cfg.min_cluster_size..=cfg.max_cluster_size);
        for _ in 0..size {
            let x = center.iter().map(|m| m + noise.sample(&mut rng)).collect();
            points.push((c, x));
        }
    }
    points.shuffle(&mut rng);
    points.truncate(cfg.cap);

    // relabel surviving clusters to a contiguous range, in order of first appearance
    let mut remap = vec![usize::MAX; k];
    let mut next = 0;
    let labels: Vec<usize> = points
        .iter()
        .map(|(c, _)| {
            if remap[*c] == usize::MAX {
                remap[*c] = next;
                next += 1;
            }
            remap[*c]
        })
        .collect();
    let embeddings = Array2::from_shape_fn((points.len(), cfg.dim), |(i, d)| points[i].1[d]);
    SubsetInstance::from_parts(id, seed, embeddings, labels, next)
}

/// One uniformly chosen member per cluster, returned in ascending index order.
pub fn resample_supervision<R: Rng + ?Sized>(inst: &SubsetInstance, rng: &mut R) -> Vec<usize> {
    let mut target: Vec<usize> = inst
        .members()
        .iter()
        .map(|m| m[rng.random_range(0..m.len())])
        .collect();
    target.sort_unstable();
    target
}
