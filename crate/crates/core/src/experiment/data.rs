//! Benchmark instances paired with the network inputs derived from them.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::features::{path_candidates, FourierLift, PathCandidates, PathEncoding, SubsetEncoding};
use crate::benchgen::{PathInstance, SubsetInstance};
use crate::error::{Error, Result};
use crate::featurizer::ElementEmbeddings;
use crate::seed::{rng_for, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Subset,
    Path,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Subset => "subset",
            Task::Path => "path",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subset" => Ok(Task::Subset),
            "path" => Ok(Task::Path),
            _ => Err(Error::InvalidConfig(format!("unknown task '{s}'"))),
        }
    }
}

/// Everything needed to rebuild network inputs from raw instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum InputSpec {
    Subset { encoding: SubsetEncoding },
    Path { encoding: PathEncoding },
}

impl InputSpec {
    pub fn task(&self) -> Task {
        match self {
            InputSpec::Subset { .. } => Task::Subset,
            InputSpec::Path { .. } => Task::Path,
        }
    }

    /// Subset inputs through a seeded Fourier lift; `pairs = 0` keeps raw embeddings.
    pub fn subset(dim: usize, pairs: usize, lengthscale: f64, seed: u64) -> Self {
        let encoding = if pairs == 0 {
            SubsetEncoding::Raw
        } else {
            let mut rng = rng_for(&[seed, stream::LIFT]);
            SubsetEncoding::Fourier(FourierLift::new(dim, pairs, lengthscale, &mut rng))
        };
        InputSpec::Subset { encoding }
    }

    /// Path inputs with a seeded lift of cell positions; `pairs = 0` omits it.
    pub fn path(max_path_len: usize, pairs: usize, lengthscale: f64, seed: u64) -> Self {
        let lift = (pairs > 0).then(|| {
            let mut rng = rng_for(&[seed, stream::LIFT]);
            FourierLift::new(2, pairs, lengthscale, &mut rng)
        });
        InputSpec::Path {
            encoding: PathEncoding { max_path_len, lift },
        }
    }

    pub fn input_dim(&self, raw_dim: usize) -> usize {
        match self {
            InputSpec::Subset { encoding } => encoding.output_dim(raw_dim),
            InputSpec::Path { encoding } => encoding.output_dim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Instance {
    Subset(SubsetInstance),
    Path(PathInstance),
}

impl Instance {
    pub fn id(&self) -> u64 {
        match self {
            Instance::Subset(s) => s.id,
            Instance::Path(p) => p.id,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prepared {
    Subset {
        inst: SubsetInstance,
        emb: ElementEmbeddings,
    },
    Path {
        inst: PathInstance,
        cand: PathCandidates,
    },
}

impl Prepared {
    pub fn new(inst: Instance, spec: &InputSpec) -> Result<Self> {
        match (inst, spec) {
            (Instance::Subset(inst), InputSpec::Subset { encoding }) => {
                let emb = encoding.encode(&inst)?;
                Ok(Prepared::Subset { inst, emb })
            }
            (Instance::Path(inst), InputSpec::Path { encoding }) => {
                let cand = path_candidates(&inst, encoding);
                Ok(Prepared::Path { inst, cand })
            }
            _ => Err(Error::InvalidConfig("instance kind does not match the input spec".into())),
        }
    }

    pub fn id(&self) -> u64 {
        match self {
            Prepared::Subset { inst, .. } => inst.id,
            Prepared::Path { inst, .. } => inst.id,
        }
    }

    pub fn embeddings(&self) -> &ElementEmbeddings {
        match self {
            Prepared::Subset { emb, .. } => emb,
            Prepared::Path { cand, .. } => &cand.features,
        }
    }

    pub fn num_candidates(&self) -> usize {
        self.embeddings().k()
    }

    /// Supervision drawn for an epoch: a sorted set for subsets, a
    /// travel-ordered candidate sequence for paths.
    pub fn target(&self, epoch: u64) -> Vec<usize> {
        match self {
            Prepared::Subset { inst, .. } => inst.target_for_epoch(epoch),
            Prepared::Path { inst, cand } => cand.encode_path(&inst.valid_paths[inst.target_for_epoch(epoch)]),
        }
    }

    /// Geometry used by the matching baseline's distance term.
    pub fn points(&self) -> Array2<f64> {
        match self {
            Prepared::Subset { inst, .. } => inst.embeddings.clone(),
            Prepared::Path { inst, cand } => {
                let d = inst.downsample as f64;
                Array2::from_shape_fn((cand.len(), 2), |(r, c)| {
                    let (i, j) = cand.cells[r];
                    d * if c == 0 { j as f64 } else { i as f64 }
                })
            }
        }
    }
}

pub fn prepare_all(instances: Vec<Instance>, spec: &InputSpec) -> Result<Vec<Prepared>> {
    instances.into_iter().map(|i| Prepared::new(i, spec)).collect()
}

/// Deterministic shuffled split into `(train, val)` with `val_fraction` held out.
pub fn split_ids(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng_for(&[seed, stream::SHUFFLE]));
    let n_val = (n as f64 * val_fraction).round() as usize;
    let val = ids.split_off(n - n_val.min(n));
    let mut train = ids;
    train.sort_unstable();
    let mut val = val;
    val.sort_unstable();
    (train, val)
}
