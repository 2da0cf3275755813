//! Minimum-cost bipartite assignment and the set-matching costs built on it.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Dense prediction x target cost table with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(Array2<f64>);

impl CostMatrix {
    pub fn new(costs: Array2<f64>) -> Result<Self> {
        if costs.nrows() == 0 || costs.ncols() == 0 {
            return Err(Error::ShapeMismatch("cost matrix must be non-empty".into()));
        }
        if costs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidConfig("cost matrix has non-finite entries".into()));
        }
        Ok(Self(costs))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::ShapeMismatch("ragged cost rows".into()));
        }
        Self::new(Array2::from_shape_fn((n, m), |(i, j)| rows[i][j]))
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }
}

/// An injective matching. `pairs` are `(prediction, target)` sorted by prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
    pub total_matched_cost: f64,
}

/// Kuhn-Munkres with row/column potentials (shortest augmenting paths),
/// `O(n^2 m)` for `n <= m`. Returns the column assigned to each row.
fn solve_rows_into_cols(cost: ArrayView2<'_, f64>) -> Vec<usize> {
    let (n, m) = cost.dim();
    debug_assert!(n <= m);
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    // p[j]: row (1-based) matched to column j; column 0 is the virtual root.
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut minv = vec![inf; m + 1];
    let mut used = vec![false; m + 1];
    for row in 1..=n {
        p[0] = row;
        let mut j0 = 0;
        minv.iter_mut().for_each(|x| *x = inf);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let reduced = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        // augment along the alternating path
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assigned = vec![usize::MAX; n];
    for j in 1..=m {
        if p[j] != 0 {
            assigned[p[j] - 1] = j - 1;
        }
    }
    assigned
}

/// Minimum total-cost matching of size `min(n, m)`.
pub fn hungarian_assign(costs: &CostMatrix) -> Assignment {
    let c = costs.view();
    let (n, m) = c.dim();
    let mut pairs: Vec<(usize, usize)> = if n <= m {
        solve_rows_into_cols(c)
            .into_iter()
            .enumerate()
            .collect()
    } else {
        solve_rows_into_cols(c.t())
            .into_iter()
            .enumerate()
            .map(|(t, p)| (p, t))
            .collect()
    };
    pairs.sort_unstable();
    let total_matched_cost = pairs.iter().map(|&(i, j)| c[[i, j]]).sum();
    Assignment {
        pairs,
        total_matched_cost,
    }
}

/// Minimum over partial matchings of matched pair costs plus `unmatched_penalty`
/// for every unmatched element on either side.
///
/// The table is padded to `(n + m)` square: prediction rows may take any of `n`
/// "unmatched" columns at the penalty, `m` dummy rows absorb unmatched targets
/// at the penalty, and dummy-to-dummy entries are free.
pub fn set_matching_cost<T, F>(pred: &[T], target: &[T], pair_cost: F, unmatched_penalty: f64) -> f64
where
    F: Fn(&T, &T) -> f64,
{
    let (n, m) = (pred.len(), target.len());
    if n == 0 || m == 0 {
        return unmatched_penalty * (n + m) as f64;
    }
    let size = n + m;
    let table = Array2::from_shape_fn((size, size), |(r, c)| match (r < n, c < m) {
        (true, true) => pair_cost(&pred[r], &target[c]),
        (true, false) | (false, true) => unmatched_penalty,
        (false, false) => 0.0,
    });
    let costs = CostMatrix::new(table).expect("pair costs must be finite");
    hungarian_assign(&costs).total_matched_cost
}

/// A finite distribution over valid target sets.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeDistribution<T> {
    modes: Vec<(Vec<T>, f64)>,
}

impl<T> ModeDistribution<T> {
    pub fn new(modes: Vec<(Vec<T>, f64)>) -> Result<Self> {
        if modes.iter().any(|(_, p)| !(*p >= 0.0)) {
            return Err(Error::InvalidConfig("mode probabilities must be >= 0".into()));
        }
        let total: f64 = modes.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "mode probabilities sum to {total}"
            )));
        }
        Ok(Self { modes })
    }

    pub fn modes(&self) -> &[(Vec<T>, f64)] {
        &self.modes
    }
}

/// `sum_modes P(mode) * set_matching_cost(pred, mode)`.
pub fn expected_matching_cost<T, F>(
    pred: &[T],
    modes: &ModeDistribution<T>,
    pair_cost: F,
    penalty: f64,
) -> f64
where
    F: Fn(&T, &T) -> f64,
{
    modes
        .modes()
        .iter()
        .map(|(set, p)| p * set_matching_cost(pred, set, &pair_cost, penalty))
        .sum()
}
