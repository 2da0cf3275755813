//! Candidate encodings for both benchmark regimes.
//!
//! Subset bags pass through a fixed random Fourier lift so that bilinear
//! key/value products can express a smooth similarity kernel between blobs.
//! Path candidates are drivable cells plus their non-drivable neighbors,
//! described by drivability, depth and a Fourier lift of their grid position.
//! Nothing in a path candidate's description names a particular valid path.

use std::collections::HashMap;

use ndarray::{s, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::benchgen::{Cell, PathInstance, SubsetInstance};
use crate::error::{Error, Result};
use crate::featurizer::ElementEmbeddings;

/// Orthogonal random Fourier features: `x -> [sin(Ωx), cos(Ωx)] / sqrt(m)`.
/// Inner products of lifted points approximate `exp(-|x - y|^2 / (2 l^2))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierLift {
    /// Frequencies, one row per feature pair.
    omega: Vec<Vec<f64>>,
}

impl FourierLift {
    /// `pairs` frequencies in `dim` input dimensions, drawn in orthogonal
    /// blocks with chi-distributed norms.
    pub fn new<R: Rng + ?Sized>(dim: usize, pairs: usize, lengthscale: f64, rng: &mut R) -> Self {
        let mut omega = Vec::with_capacity(pairs);
        while omega.len() < pairs {
            let block = orthonormal_block(dim, rng);
            for row in block {
                if omega.len() == pairs {
                    break;
                }
                let norm = (0..dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(rng);
                        z * z
                    })
                    .sum::<f64>()
                    .sqrt();
                omega.push(row.iter().map(|v| v * norm / lengthscale).collect());
            }
        }
        Self { omega }
    }

    pub fn input_dim(&self) -> usize {
        self.omega.first().map_or(0, Vec::len)
    }

    pub fn output_dim(&self) -> usize {
        2 * self.omega.len()
    }

    pub fn apply(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "lift expects width {}, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let m = self.omega.len();
        let norm = 1.0 / (m as f64).sqrt();
        let mut out = Array2::zeros((x.nrows(), 2 * m));
        for (r, row) in x.rows().into_iter().enumerate() {
            for (f, w) in self.omega.iter().enumerate() {
                let a: f64 = row.iter().zip(w).map(|(x, w)| x * w).sum();
                out[[r, f]] = a.sin() * norm;
                out[[r, m + f]] = a.cos() * norm;
            }
        }
        Ok(out)
    }
}

/// Rows of a random orthogonal matrix via Gram-Schmidt on Gaussian vectors.
fn orthonormal_block<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while rows.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        for u in &rows {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (a, b) in v.iter_mut().zip(u) {
                *a -= dot * b;
            }
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-8 {
            rows.push(v.into_iter().map(|a| a / n).collect());
        }
    }
    rows
}

/// How subset embeddings are turned into network inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SubsetEncoding {
    Raw,
    Fourier(FourierLift),
}

impl SubsetEncoding {
    pub fn output_dim(&self, input_dim: usize) -> usize {
        match self {
            SubsetEncoding::Raw => input_dim,
            SubsetEncoding::Fourier(l) => l.output_dim(),
        }
    }

    pub fn encode(&self, inst: &SubsetInstance) -> Result<ElementEmbeddings> {
        match self {
            SubsetEncoding::Raw => ElementEmbeddings::new(inst.embeddings.clone()),
            SubsetEncoding::Fourier(l) => ElementEmbeddings::new(l.apply(&inst.embeddings)?),
        }
    }
}

/// Fixed per-cell features ahead of the position lift.
pub const PATH_BASE_FEATURES: usize = 5;

/// How path candidates are turned into network inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEncoding {
    /// Normalizes the depth feature.
    pub max_path_len: usize,
    /// Lift of `(row, col)` in cell units.
    pub lift: Option<FourierLift>,
}

impl PathEncoding {
    pub fn output_dim(&self) -> usize {
        PATH_BASE_FEATURES + self.lift.as_ref().map_or(0, FourierLift::output_dim)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathCandidates {
    /// Candidate cells in row-major order.
    pub cells: Vec<Cell>,
    pub drivable: Vec<bool>,
    pub features: ElementEmbeddings,
    index: HashMap<Cell, usize>,
}

impl PathCandidates {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn index_of(&self, cell: Cell) -> Option<usize> {
        self.index.get(&cell).copied()
    }

    /// Candidate indices of a cell sequence.
    pub fn encode_path(&self, path: &[Cell]) -> Vec<usize> {
        path.iter()
            .map(|&c| self.index_of(c).expect("path cells are candidates"))
            .collect()
    }

    pub fn decode(&self, indices: &[usize]) -> Vec<Cell> {
        indices.iter().map(|&i| self.cells[i]).collect()
    }
}

/// Drivable cells and their 8-neighborhood, each described by
/// `[drivable, is_start, row / h, col / w, depth / max_len, lift(row, col)...]`.
pub fn path_candidates(inst: &PathInstance, encoding: &PathEncoding) -> PathCandidates {
    let (h, w) = (inst.grid_h, inst.grid_w);
    let drivable_cells = inst.drivable_cells();
    let mut is_candidate = vec![false; h * w];
    for &(i, j) in &drivable_cells {
        for di in -1i64..=1 {
            for dj in -1i64..=1 {
                let (ni, nj) = (i as i64 + di, j as i64 + dj);
                if (0..h as i64).contains(&ni) && (0..w as i64).contains(&nj) {
                    is_candidate[ni as usize * w + nj as usize] = true;
                }
            }
        }
    }
    let cells: Vec<Cell> = (0..h * w)
        .filter(|&x| is_candidate[x])
        .map(|x| (x / w, x % w))
        .collect();
    let start = inst.start_cell();
    let start_row = start.0;
    let drivable: Vec<bool> = cells.iter().map(|&c| inst.cell_is_drivable(c)).collect();
    let mut features = Array2::zeros((cells.len(), encoding.output_dim()));
    for (r, &(i, j)) in cells.iter().enumerate() {
        let mut f = features.row_mut(r);
        f[0] = f64::from(u8::from(drivable[r]));
        f[1] = f64::from(u8::from((i, j) == start));
        f[2] = i as f64 / h as f64;
        f[3] = j as f64 / w as f64;
        f[4] = start_row.abs_diff(i) as f64 / encoding.max_path_len as f64;
    }
    if let Some(lift) = &encoding.lift {
        let pos = Array2::from_shape_fn((cells.len(), 2), |(r, c)| {
            let (i, j) = cells[r];
            if c == 0 { i as f64 } else { j as f64 }
        });
        let lifted = lift.apply(&pos).expect("lift over two coordinates");
        features.slice_mut(s![.., PATH_BASE_FEATURES..]).assign(&lifted);
    }
    let index = cells.iter().enumerate().map(|(x, &c)| (c, x)).collect();
    PathCandidates {
        cells,
        drivable,
        features: ElementEmbeddings::new(features).expect("at least the start cell"),
        index,
    }
}

/// Cells of `pred` ordered along the direction of travel (by increasing
/// distance from the start row, then column).
pub fn order_cells(mut pred: Vec<Cell>, start_row: usize) -> Vec<Cell> {
    pred.sort_by_key(|&(i, j)| (start_row.abs_diff(i), j));
    pred
}
