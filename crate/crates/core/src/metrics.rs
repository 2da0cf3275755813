//! Path-regime geometry metrics and cluster-level set metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::benchgen::{Cell, PathInstance, Raster};
use crate::error::{Error, Result};

pub type Point = (f64, f64);

fn dist(a: Point, b: Point) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

fn nearest(p: Point, set: &[Point]) -> f64 {
    set.iter().map(|&q| dist(p, q)).fold(f64::INFINITY, f64::min)
}

fn check_inputs(pred: &[Point], gt_paths: &[Vec<Point>]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::EmptyPrediction);
    }
    if gt_paths.is_empty() || gt_paths.iter().any(Vec::is_empty) {
        return Err(Error::ShapeMismatch("ground truth needs non-empty modes".into()));
    }
    Ok(())
}

/// Mean distance from each predicted point to its nearest point on a mode,
/// minimized over modes.
pub fn min_ade(pred: &[Point], gt_paths: &[Vec<Point>]) -> Result<f64> {
    check_inputs(pred, gt_paths)?;
    Ok(gt_paths
        .iter()
        .map(|mode| pred.iter().map(|&p| nearest(p, mode)).sum::<f64>() / pred.len() as f64)
        .fold(f64::INFINITY, f64::min))
}

fn hausdorff(a: &[Point], b: &[Point]) -> f64 {
    let directed = |x: &[Point], y: &[Point]| x.iter().map(|&p| nearest(p, y)).fold(0.0, f64::max);
    directed(a, b).max(directed(b, a))
}

/// Symmetric Hausdorff distance to each mode, minimized over modes.
pub fn min_hd(pred: &[Point], gt_paths: &[Vec<Point>]) -> Result<f64> {
    check_inputs(pred, gt_paths)?;
    Ok(gt_paths
        .iter()
        .map(|mode| hausdorff(pred, mode))
        .fold(f64::INFINITY, f64::min))
}

/// Fraction of points whose pixel is not drivable; points outside the raster
/// count as off-road.
pub fn offroad_rate(pred: &[Point], mask: &Raster) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::EmptyPrediction);
    }
    let off = pred.iter().filter(|&&(x, y)| !mask.contains_point(x, y)).count();
    Ok(off as f64 / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathMetrics {
    pub min_ade: f64,
    pub min_hd: f64,
    pub offroad_rate: f64,
    pub n_paths: usize,
}

impl PathMetrics {
    /// Stand-in row for an empty prediction: both distances equal the mask
    /// diagonal and every (absent) point counts as off-road.
    pub fn sentinel(mask: &Raster, n_paths: usize) -> Self {
        let diag = mask.diagonal();
        Self {
            min_ade: diag,
            min_hd: diag,
            offroad_rate: 1.0,
            n_paths,
        }
    }
}

/// Metrics of a predicted cell sequence, decoded at cell centers.
pub fn path_metrics(pred: &[Cell], inst: &PathInstance) -> PathMetrics {
    if pred.is_empty() {
        return PathMetrics::sentinel(&inst.drivable_mask, inst.n_paths());
    }
    let points = inst.cells_to_points(pred);
    let modes = inst.path_points();
    PathMetrics {
        min_ade: min_ade(&points, &modes).expect("non-empty inputs"),
        min_hd: min_hd(&points, &modes).expect("non-empty inputs"),
        offroad_rate: offroad_rate(&points, &inst.drivable_mask).expect("non-empty prediction"),
        n_paths: inst.n_paths(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterMetrics {
    pub clu_rec: f64,
    pub clu_prec: f64,
    pub clu_f1: f64,
    pub card_err: usize,
}

pub fn cluster_metrics(pred: &[usize], labels: &[usize], k: usize) -> Result<ClusterMetrics> {
    let mut covered = vec![false; k];
    for &i in pred {
        let label = *labels
            .get(i)
            .ok_or(Error::IndexOutOfRange { index: i, k: labels.len() })?;
        if label >= k {
            return Err(Error::InvalidConfig(format!("label {label} >= k = {k}")));
        }
        covered[label] = true;
    }
    let hits = covered.iter().filter(|&&c| c).count() as f64;
    let clu_rec = if k == 0 { 0.0 } else { hits / k as f64 };
    let clu_prec = if pred.is_empty() { 0.0 } else { hits / pred.len() as f64 };
    let clu_f1 = if clu_rec + clu_prec > 0.0 {
        2.0 * clu_rec * clu_prec / (clu_rec + clu_prec)
    } else {
        0.0
    };
    Ok(ClusterMetrics {
        clu_rec,
        clu_prec,
        clu_f1,
        card_err: pred.len().abs_diff(k),
    })
}

/// Mean of each path metric, overall and per number of valid paths.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PathSummary {
    pub count: usize,
    pub min_ade: f64,
    pub min_hd: f64,
    pub offroad_rate: f64,
}

pub fn summarize_paths<'a>(rows: impl IntoIterator<Item = &'a PathMetrics>) -> PathSummary {
    let mut s = PathSummary::default();
    for r in rows {
        s.count += 1;
        s.min_ade += r.min_ade;
        s.min_hd += r.min_hd;
        s.offroad_rate += r.offroad_rate;
    }
    if s.count > 0 {
        let n = s.count as f64;
        s.min_ade /= n;
        s.min_hd /= n;
        s.offroad_rate /= n;
    }
    s
}

pub fn stratify_by_paths(rows: &[PathMetrics]) -> BTreeMap<usize, PathSummary> {
    let mut groups: BTreeMap<usize, Vec<PathMetrics>> = BTreeMap::new();
    for r in rows {
        groups.entry(r.n_paths).or_default().push(*r);
    }
    groups.into_iter().map(|(n, g)| (n, summarize_paths(&g))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub count: usize,
    pub clu_rec: f64,
    pub clu_prec: f64,
    pub clu_f1: f64,
    pub card_err: f64,
}

pub fn summarize_clusters<'a>(rows: impl IntoIterator<Item = &'a ClusterMetrics>) -> ClusterSummary {
    let mut s = ClusterSummary::default();
    for r in rows {
        s.count += 1;
        s.clu_rec += r.clu_rec;
        s.clu_prec += r.clu_prec;
        s.clu_f1 += r.clu_f1;
        s.card_err += r.card_err as f64;
    }
    if s.count > 0 {
        let n = s.count as f64;
        s.clu_rec /= n;
        s.clu_prec /= n;
        s.clu_f1 /= n;
        s.card_err /= n;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchgen::{gen_path_instance, PathConfig};
    use crate::seed::rng_for;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn ade_examples() {
        let mode = vec![(0.0, 0.0), (1.0, 2.0), (5.0, 5.0)];
        assert_eq!(min_ade(&mode, std::slice::from_ref(&mode)).unwrap(), 0.0);
        let modes = vec![vec![(3.0, 4.0)], vec![(6.0, 8.0)]];
        assert_eq!(min_ade(&[(0.0, 0.0)], &modes).unwrap(), 5.0);
        assert!(matches!(min_ade(&[], &modes), Err(Error::EmptyPrediction)));
    }

    #[test]
    fn hausdorff_examples() {
        let mode = vec![(0.0, 0.0), (0.0, 10.0)];
        assert_eq!(min_hd(&mode, std::slice::from_ref(&mode)).unwrap(), 0.0);
        assert_eq!(min_hd(&[(0.0, 0.0)], &[mode]).unwrap(), 10.0);
    }

    #[test]
    fn offroad_examples() {
        let mut mask = Raster::new(10, 10);
        mask.fill_rect(0, 0, 5, 10);
        let pts = [(1.0, 1.0), (2.5, 3.0), (4.9, 9.9), (7.0, 2.0)];
        assert_eq!(offroad_rate(&pts, &mask).unwrap(), 0.25);
        assert_eq!(offroad_rate(&[(1.0, 1.0), (-1.0, 3.0)], &mask).unwrap(), 0.5);
        assert_eq!(offroad_rate(&[(1.0, 10.0)], &mask).unwrap(), 1.0);
    }

    #[test]
    fn ground_truth_paths_are_on_road_and_exact() {
        let cfg = PathConfig::default();
        for id in 0..50 {
            let inst = gen_path_instance(&cfg, 1, id).unwrap();
            for p in &inst.valid_paths {
                let m = path_metrics(p, &inst);
                assert_eq!(m.offroad_rate, 0.0);
                assert_eq!(m.min_ade, 0.0);
                assert_eq!(m.min_hd, 0.0);
            }
        }
    }

    #[test]
    fn empty_prediction_gives_sentinel() {
        let inst = gen_path_instance(&PathConfig::default(), 2, 0).unwrap();
        let m = path_metrics(&[], &inst);
        assert_eq!(m.min_ade, (256f64).hypot(256.0));
        assert_eq!(m.offroad_rate, 1.0);
    }

    #[test]
    fn hd_dominates_ade_on_random_sets() {
        let mut rng = rng_for(&[3]);
        let mut pts = |n: usize| -> Vec<Point> {
            (0..n).map(|_| (rng.random_range(0.0..50.0), rng.random_range(0.0..50.0))).collect()
        };
        for _ in 0..500 {
            let pred = pts(7);
            let modes = vec![pts(5), pts(9), pts(1)];
            assert!(min_hd(&pred, &modes).unwrap() >= min_ade(&pred, &modes).unwrap());
        }
    }

    proptest! {
        #[test]
        fn extra_mode_never_increases_ade(
            pred in prop::collection::vec((0.0f64..20.0, 0.0f64..20.0), 1..6),
            a in prop::collection::vec((0.0f64..20.0, 0.0f64..20.0), 1..6),
            b in prop::collection::vec((0.0f64..20.0, 0.0f64..20.0), 1..6),
        ) {
            let one = min_ade(&pred, std::slice::from_ref(&a)).unwrap();
            let two = min_ade(&pred, &[a, b]).unwrap();
            prop_assert!(two <= one);
        }

        #[test]
        fn cluster_metrics_are_bounded_and_order_free(
            labels in prop::collection::vec(0usize..5, 5..30),
            picks in prop::collection::vec(0usize..30, 0..10),
        ) {
            let k = 5;
            let n = labels.len();
            let mut pred: Vec<usize> = picks.into_iter().map(|p| p % n).collect();
            pred.dedup();
            let m = cluster_metrics(&pred, &labels, k).unwrap();
            for v in [m.clu_rec, m.clu_prec, m.clu_f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let mut rev = pred.clone();
            rev.reverse();
            prop_assert_eq!(cluster_metrics(&rev, &labels, k).unwrap(), m);
        }
    }

    #[test]
    fn cluster_examples() {
        let labels = [0, 0, 1, 1, 2, 3];
        let perfect = cluster_metrics(&[0, 2, 4, 5], &labels, 4).unwrap();
        assert_eq!((perfect.clu_rec, perfect.clu_prec, perfect.clu_f1, perfect.card_err), (1.0, 1.0, 1.0, 0));
        let same = cluster_metrics(&[0, 1], &labels, 4).unwrap();
        assert_eq!((same.clu_rec, same.clu_prec, same.card_err), (0.25, 0.5, 2));
        assert!((same.clu_f1 - 2.0 * 0.25 * 0.5 / 0.75).abs() < 1e-15);
        let empty = cluster_metrics(&[], &labels, 4).unwrap();
        assert_eq!((empty.clu_rec, empty.clu_prec, empty.clu_f1, empty.card_err), (0.0, 0.0, 0.0, 4));
        assert!(cluster_metrics(&[9], &labels, 4).is_err());
    }

    #[test]
    fn stratification_groups_by_path_count() {
        let row = |ade: f64, n: usize| PathMetrics {
            min_ade: ade,
            min_hd: ade,
            offroad_rate: 0.0,
            n_paths: n,
        };
        let s = stratify_by_paths(&[row(1.0, 1), row(3.0, 2), row(5.0, 2)]);
        assert_eq!(s[&1].min_ade, 1.0);
        assert_eq!(s[&2].min_ade, 4.0);
        assert_eq!(s[&2].count, 2);
    }
}
