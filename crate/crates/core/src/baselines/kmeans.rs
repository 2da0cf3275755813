//! Lloyd k-means with k-means++ seeding and restarts, used as the oracle-k
//! representative selector.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iters: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            restarts: 8,
            max_iters: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LloydRun {
    pub centroids: Array2<f64>,
    pub assignment: Vec<usize>,
    /// Within-cluster sum of squares after each assignment step.
    pub wcss_trace: Vec<f64>,
}

impl LloydRun {
    pub fn wcss(&self) -> f64 {
        *self.wcss_trace.last().unwrap_or(&f64::INFINITY)
    }
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: ArrayView1<'_, f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(point, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init<R: Rng + ?Sized>(points: ArrayView2<'_, f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let n = points.nrows();
    let mut centroids = Array2::zeros((k, points.ncols()));
    centroids.row_mut(0).assign(&points.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), centroids.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && u < acc {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&points.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), centroids.row(c)));
        }
    }
    centroids
}

/// Alternating assignment / mean updates until assignments stop changing.
/// A cluster left empty is re-seeded at the point farthest from its centroid.
pub fn lloyd(points: ArrayView2<'_, f64>, mut centroids: Array2<f64>, max_iters: usize) -> LloydRun {
    let n = points.nrows();
    let k = centroids.nrows();
    let mut assignment = vec![usize::MAX; n];
    let mut dists = vec![0.0; n];
    let mut wcss_trace = Vec::new();
    for _ in 0..max_iters.max(1) {
        let mut changed = false;
        for i in 0..n {
            let (c, d) = nearest(points.row(i), &centroids);
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
            dists[i] = d;
        }
        wcss_trace.push(dists.iter().sum());
        if !changed {
            break;
        }
        let mut sums = Array2::<f64>::zeros(centroids.dim());
        let mut counts = vec![0usize; k];
        for i in 0..n {
            sums.row_mut(assignment[i]).scaled_add(1.0, &points.row(i));
            counts[assignment[i]] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                let mean = &sums.row(c) / counts[c] as f64;
                centroids.row_mut(c).assign(&mean);
            }
        }
        for c in (0..k).filter(|&c| counts[c] == 0) {
            let far = (0..n)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                .expect("non-empty point set");
            centroids.row_mut(c).assign(&points.row(far));
            dists[far] = 0.0;
        }
    }
    LloydRun {
        centroids,
        assignment,
        wcss_trace,
    }
}

/// Best-of-restarts Lloyd clustering; returns, for every non-empty cluster, the
/// member nearest its centroid (lowest index on ties), in ascending order.
pub fn kmeans_representatives<R: Rng + ?Sized>(
    points: ArrayView2<'_, f64>,
    k: usize,
    rng: &mut R,
    cfg: KMeansConfig,
) -> Result<Vec<usize>> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(Error::InvalidK { k, n });
    }
    let mut best: Option<LloydRun> = None;
    for _ in 0..cfg.restarts.max(1) {
        let init = plus_plus_init(points, k, rng);
        let run = lloyd(points, init, cfg.max_iters);
        if best.as_ref().is_none_or(|b| run.wcss() < b.wcss()) {
            best = Some(run);
        }
    }
    let run = best.expect("at least one restart");
    let mut reps = Vec::with_capacity(k);
    for c in 0..k {
        let mut pick: Option<(usize, f64)> = None;
        for i in (0..n).filter(|&i| run.assignment[i] == c) {
            let d = sq_dist(points.row(i), run.centroids.row(c));
            if pick.is_none_or(|(_, bd)| d < bd) {
                pick = Some((i, d));
            }
        }
        if let Some((i, _)) = pick {
            reps.push(i);
        }
    }
    reps.sort_unstable();
    Ok(reps)
}
