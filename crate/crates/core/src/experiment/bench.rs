//! Decode timing: incremental greedy decoding against the from-scratch
//! reference, plus the per-step cost of a single incremental update.

use std::hint::black_box;
use std::time::Instant;

use ndarray::{Array2, ShapeBuilder};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CplModel;
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub ks: Vec<usize>,
    /// Forced selection sizes.
    pub sizes: Vec<usize>,
    pub reps: usize,
    pub decodes_per_rep: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            ks: vec![256, 512, 1024, 2048],
            sizes: vec![8, 16, 32, 64],
            reps: 10,
            decodes_per_rep: 100,
            warmup: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchRow {
    pub k: usize,
    pub selected: usize,
    pub greedy_mean_us: f64,
    pub greedy_std_us: f64,
    pub recompute_mean_us: f64,
    pub recompute_std_us: f64,
    /// Mean recompute time over mean greedy time.
    pub ratio: f64,
    pub advance_mean_ns: f64,
    pub advance_std_ns: f64,
}

/// A random model whose EOS never wins, so greedy decoding with
/// `max_steps = n` selects exactly `n` candidates.
pub fn forced_length_model(k: usize, seed: u64) -> CplModel {
    let mut rng = rng_for(&[seed, k as u64]);
    let mut theta: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
    theta.push(-1e3);
    let mut w = Array2::zeros((k + 1, k + 1).f());
    for i in 0..k {
        for j in 0..k {
            w[[j, i]] = rng.random_range(-0.05..0.05);
        }
    }
    CplModel::new(theta, w).expect("finite parameters")
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Mean seconds per call within each repetition.
fn time_per_call(reps: usize, calls: usize, warmup: usize, mut f: impl FnMut()) -> Vec<f64> {
    for _ in 0..warmup {
        f();
    }
    (0..reps)
        .map(|_| {
            let t = Instant::now();
            for _ in 0..calls {
                f();
            }
            t.elapsed().as_secs_f64() / calls as f64
        })
        .collect()
}

/// Mean seconds per `advance_in_place` along `order`, one value per repetition.
fn time_advance(model: &CplModel, order: &[usize], reps: usize, calls: usize) -> Vec<f64> {
    let fresh = model.init_state();
    (0..reps)
        .map(|_| {
            let mut states = vec![fresh.clone(); calls];
            let t = Instant::now();
            for state in &mut states {
                for &j in order {
                    model.advance_in_place(state, j).expect("valid order");
                }
            }
            let secs = t.elapsed().as_secs_f64();
            black_box(&states);
            secs / (calls * order.len()) as f64
        })
        .collect()
}

pub fn bench_cell(model: &CplModel, selected: usize, cfg: &BenchConfig) -> Result<BenchRow> {
    let greedy = model.greedy_decode(selected);
    if greedy.indices.len() != selected || greedy.indices != model.decode_recompute(selected).indices {
        return Err(Error::InvalidModel(format!(
            "decoders disagree or stop early at k={}, |S|={selected}",
            model.k()
        )));
    }
    let g = time_per_call(cfg.reps, cfg.decodes_per_rep, cfg.warmup, || {
        black_box(model.greedy_decode(black_box(selected)));
    });
    let r = time_per_call(cfg.reps, cfg.decodes_per_rep, cfg.warmup, || {
        black_box(model.decode_recompute(black_box(selected)));
    });
    let a = time_advance(model, &greedy.indices, cfg.reps, cfg.decodes_per_rep);
    let (gm, gs) = mean_std(&g);
    let (rm, rs) = mean_std(&r);
    let (am, as_) = mean_std(&a);
    Ok(BenchRow {
        k: model.k(),
        selected,
        greedy_mean_us: gm * 1e6,
        greedy_std_us: gs * 1e6,
        recompute_mean_us: rm * 1e6,
        recompute_std_us: rs * 1e6,
        ratio: rm / gm,
        advance_mean_ns: am * 1e9,
        advance_std_ns: as_ * 1e9,
    })
}

/// Times every `(k, |S|)` cell of the grid, sequentially.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.reps == 0 || cfg.decodes_per_rep == 0 {
        return Err(Error::InvalidConfig("reps and decodes_per_rep must be positive".into()));
    }
    let mut rows = Vec::new();
    for &k in &cfg.ks {
        let model = forced_length_model(k, cfg.seed);
        for &s in &cfg.sizes {
            if s > k {
                return Err(Error::InvalidConfig(format!("|S| = {s} exceeds k = {k}")));
            }
            rows.push(bench_cell(&model, s, cfg)?);
        }
    }
    Ok(rows)
}

/// Per-step advance time at `k_hi` over `k_lo`, at the largest size measured for both.
pub fn advance_scaling(rows: &[BenchRow], k_lo: usize, k_hi: usize) -> Option<f64> {
    let pick = |k: usize| rows.iter().filter(|r| r.k == k).max_by_key(|r| r.selected);
    Some(pick(k_hi)?.advance_mean_ns / pick(k_lo)?.advance_mean_ns)
}
