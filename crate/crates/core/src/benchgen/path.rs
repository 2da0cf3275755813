//! Fork-tree corridors on a decision grid. Paths start on the bottom row and
//! advance one row per step; each fork splits a branch into two children that
//! own disjoint column intervals, so distinct branches never share a cell.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::grid::{cell_to_pixel, Cell, Raster};
use crate::error::{Error, Result};
use crate::seed::{rng_for, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathConfig {
    pub grid_h: usize,
    pub grid_w: usize,
    /// Pixels per cell side.
    pub downsample: usize,
    /// Number of forks to insert (upper bound when `min_forks` is set).
    pub fork_count: usize,
    /// When set, the fork count is drawn uniformly from `min_forks..=fork_count`.
    pub min_forks: Option<usize>,
    pub max_paths: usize,
    pub max_path_len: usize,
    /// Rows a branch must grow before it may fork again.
    pub min_fork_spacing: usize,
    /// Minimum column-interval width each child of a fork must receive.
    pub min_branch_width: usize,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            grid_h: 32,
            grid_w: 32,
            downsample: 8,
            fork_count: 3,
            min_forks: Some(0),
            max_paths: 6,
            max_path_len: 64,
            min_fork_spacing: 3,
            min_branch_width: 2,
        }
    }
}

impl PathConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.grid_h < 8 || self.grid_w < 8 {
            return bad("grid dimensions must be at least 8");
        }
        if self.downsample == 0 || self.max_paths == 0 || self.max_path_len == 0 {
            return bad("downsample, max_paths and max_path_len must be positive");
        }
        if self.min_forks.is_some_and(|m| m > self.fork_count) {
            return bad("min_forks exceeds fork_count");
        }
        Ok(())
    }
}

/// Diagonal steps a fresh child takes away from its sibling.
const DIVERGE_STEPS: usize = 2;

#[derive(Debug, Clone)]
pub struct Branch {
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub cells: Vec<Cell>,
    lo: usize,
    hi: usize,
    side: i64,
}

impl Branch {
    fn head(&self) -> Cell {
        *self.cells.last().expect("branches start with one cell")
    }
}

/// Growth record of a generated corridor network. Branch 0 is the trunk.
#[derive(Debug, Clone)]
pub struct ForkTree {
    pub branches: Vec<Branch>,
    pub forks_applied: usize,
}

impl ForkTree {
    /// Root-to-leaf cell sequences, ordered by the leaf's final column.
    pub fn enumerate_paths(&self) -> Vec<Vec<Cell>> {
        let mut leaves: Vec<usize> = (0..self.branches.len())
            .filter(|&b| self.branches[b].children.is_empty())
            .collect();
        leaves.sort_by_key(|&b| self.branches[b].head().1);
        leaves
            .into_iter()
            .map(|leaf| {
                let mut chain = vec![leaf];
                while let Some(p) = self.branches[*chain.last().unwrap()].parent {
                    chain.push(p);
                }
                chain
                    .iter()
                    .rev()
                    .flat_map(|&b| self.branches[b].cells.iter().copied())
                    .collect()
            })
            .collect()
    }
}

/// Random lateral step with a pull toward the middle of the branch interval.
fn drift_step<R: Rng + ?Sized>(rng: &mut R, c: usize, lo: usize, hi: usize) -> i64 {
    let mid = (lo + hi) as f64 / 2.0;
    let toward = (mid - c as f64).signum() as i64;
    match rng.random_range(0..10) {
        0 | 1 => -1,
        2 | 3 => 1,
        4 | 5 if (mid - c as f64).abs() >= 1.0 => toward,
        _ => 0,
    }
}

pub fn grow_fork_tree<R: Rng + ?Sized>(cfg: &PathConfig, rng: &mut R) -> ForkTree {
    let (h, w) = (cfg.grid_h, cfg.grid_w);
    let wanted = match cfg.min_forks {
        Some(lo) => rng.random_range(lo..=cfg.fork_count),
        None => cfg.fork_count,
    };
    let row_lo = (h / 8).max(1);
    let row_hi = h - 4;
    let span = row_hi - row_lo + 1;
    let mut fork_rows: Vec<usize> = sample(rng, span, wanted.min(span))
        .into_iter()
        .map(|r| r + row_lo)
        .collect();
    fork_rows.sort_unstable();

    let c0 = (w / 2) as i64 + rng.random_range(-2..=2);
    let mut branches = vec![Branch {
        parent: None,
        children: Vec::new(),
        cells: vec![(h - 1, c0 as usize)],
        lo: 0,
        hi: w - 1,
        side: 0,
    }];
    let mut active = vec![0usize];
    let mut forks_applied = 0;

    // a fork whose row has no eligible branch stays pending until one appears
    let mut pending = 0usize;
    for r in (0..h - 1).rev() {
        let mut fresh = Vec::new();
        if fork_rows.binary_search(&r).is_ok() {
            pending += 1;
        }
        if pending > 0 && active.len() < cfg.max_paths {
            let eligible: Vec<usize> = active
                .iter()
                .copied()
                .filter(|&b| {
                    let br = &branches[b];
                    let c = br.head().1;
                    br.cells.len() >= cfg.min_fork_spacing
                        && c >= br.lo + cfg.min_branch_width
                        && br.hi >= c + cfg.min_branch_width
                })
                .collect();
            if !eligible.is_empty() {
                let b = eligible[rng.random_range(0..eligible.len())];
                let (c, lo, hi) = (branches[b].head().1, branches[b].lo, branches[b].hi);
                for (side, col, lo, hi) in [(-1, c - 1, lo, c - 1), (1, c + 1, c + 1, hi)] {
                    let id = branches.len();
                    branches.push(Branch {
                        parent: Some(b),
                        children: Vec::new(),
                        cells: vec![(r, col)],
                        lo,
                        hi,
                        side,
                    });
                    branches[b].children.push(id);
                    fresh.push(id);
                }
                active.retain(|&a| a != b);
                forks_applied += 1;
                pending -= 1;
            }
        }
        for &b in &active {
            let br = &mut branches[b];
            let c = br.head().1 as i64;
            let step = if br.side != 0 && br.cells.len() <= DIVERGE_STEPS {
                br.side
            } else {
                drift_step(rng, c as usize, br.lo, br.hi)
            };
            let next = (c + step).clamp(br.lo as i64, br.hi as i64) as usize;
            br.cells.push((r, next));
        }
        active.extend(fresh);
    }
    ForkTree {
        branches,
        forks_applied,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathInstance {
    pub id: u64,
    pub seed: u64,
    pub grid_h: usize,
    pub grid_w: usize,
    pub downsample: usize,
    pub drivable_mask: Raster,
    pub valid_paths: Vec<Vec<Cell>>,
    /// Sub-cell offsets, parallel to `valid_paths`.
    pub offsets: Vec<Vec<(f64, f64)>>,
    /// Index into `valid_paths`.
    pub sampled_target: usize,
}

impl PathInstance {
    pub fn from_parts(
        id: u64,
        seed: u64,
        grid_h: usize,
        grid_w: usize,
        downsample: usize,
        drivable_mask: Raster,
        valid_paths: Vec<Vec<Cell>>,
    ) -> Result<Self> {
        if valid_paths.is_empty() || valid_paths.iter().any(Vec::is_empty) {
            return Err(Error::InvalidConfig("an instance needs non-empty valid paths".into()));
        }
        if drivable_mask.width() != grid_w * downsample || drivable_mask.height() != grid_h * downsample {
            return Err(Error::ShapeMismatch("mask does not match grid size".into()));
        }
        let half = downsample as f64 / 2.0;
        let offsets = valid_paths.iter().map(|p| vec![(half, half); p.len()]).collect();
        let mut inst = Self {
            id,
            seed,
            grid_h,
            grid_w,
            downsample,
            drivable_mask,
            valid_paths,
            offsets,
            sampled_target: 0,
        };
        for (i, j) in inst.valid_paths.iter().flatten().copied() {
            if i >= grid_h || j >= grid_w || !inst.cell_is_drivable((i, j)) {
                return Err(Error::InvalidConfig(format!("path cell ({i}, {j}) is off the drivable mask")));
            }
        }
        inst.sampled_target = inst.target_for_epoch(0);
        Ok(inst)
    }

    pub fn n_paths(&self) -> usize {
        self.valid_paths.len()
    }

    pub fn target_path(&self) -> &[Cell] {
        &self.valid_paths[self.sampled_target]
    }

    /// Deterministic target draw for a given epoch (epoch 0 is the stored draw).
    pub fn target_for_epoch(&self, epoch: u64) -> usize {
        let mut rng = rng_for(&[self.seed, self.id, stream::TARGET, epoch]);
        rng.random_range(0..self.valid_paths.len())
    }

    pub fn cell_is_drivable(&self, (i, j): Cell) -> bool {
        let half = self.downsample as f64 / 2.0;
        cell_to_pixel(i, j, half, half, self.downsample as f64)
            .is_ok_and(|(x, y)| self.drivable_mask.contains_point(x, y))
    }

    /// Cells whose center lies on the drivable mask, in row-major order.
    pub fn drivable_cells(&self) -> Vec<Cell> {
        (0..self.grid_h)
            .flat_map(|i| (0..self.grid_w).map(move |j| (i, j)))
            .filter(|&c| self.cell_is_drivable(c))
            .collect()
    }

    /// Start cell shared by every valid path.
    pub fn start_cell(&self) -> Cell {
        self.valid_paths[0][0]
    }

    /// Cell-center pixel coordinates of a cell sequence.
    pub fn cells_to_points(&self, cells: &[Cell]) -> Vec<(f64, f64)> {
        let half = self.downsample as f64 / 2.0;
        cells
            .iter()
            .map(|&(i, j)| cell_to_pixel(i, j, half, half, self.downsample as f64).expect("center offset"))
            .collect()
    }

    /// Pixel coordinates of every valid path, using the stored offsets.
    pub fn path_points(&self) -> Vec<Vec<(f64, f64)>> {
        let d = self.downsample as f64;
        self.valid_paths
            .iter()
            .zip(&self.offsets)
            .map(|(p, offs)| {
                p.iter()
                    .zip(offs)
                    .map(|(&(i, j), &(dx, dy))| cell_to_pixel(i, j, dx, dy, d).expect("valid offset"))
                    .collect()
            })
            .collect()
    }
}

pub fn gen_path_instance(cfg: &PathConfig, seed: u64, id: u64) -> Result<PathInstance> {
    cfg.validate()?;
    let mut rng = rng_for(&[seed, id, stream::INSTANCE]);
    let tree = grow_fork_tree(cfg, &mut rng);
    let mut paths = tree.enumerate_paths();
    paths.truncate(cfg.max_paths);
    for p in &mut paths {
        p.truncate(cfg.max_path_len);
    }
    let d = cfg.downsample;
    let mut mask = Raster::new(cfg.grid_w * d, cfg.grid_h * d);
    for &(i, j) in paths.iter().flatten() {
        mask.fill_rect(j * d, i * d, d, d);
    }
    PathInstance::from_parts(id, seed, cfg.grid_h, cfg.grid_w, d, mask, paths)
}
