//! The five-element ambiguity fixture: two valid modes `{a}` and `{b, c}`,
//! two hybrid elements `d`, `e`, a matching-cost table, and a CPL
//! parameterization whose greedy decodes are exactly the valid modes.

use ndarray::Array2;

use crate::baselines::ModeDistribution;
use crate::model::CplModel;

pub const A: usize = 0;
pub const B: usize = 1;
pub const C: usize = 2;
pub const D: usize = 3;
pub const E: usize = 4;
pub const NAMES: [&str; 5] = ["a", "b", "c", "d", "e"];

#[derive(Debug, Clone)]
pub struct ToyFixture {
    pub model: CplModel,
    pub modes: ModeDistribution<usize>,
    /// Symmetric pair cost table over `{a, ..., e}`.
    pub costs: [[f64; 5]; 5],
    pub penalty: f64,
}

impl ToyFixture {
    pub fn pair_cost(&self, x: usize, y: usize) -> f64 {
        self.costs[x][y]
    }

    /// Replaces one interaction entry, keeping every other parameter.
    pub fn with_interaction(&self, j: usize, i: usize, value: f64) -> Self {
        let mut w = self.model.w().to_owned();
        w[[j, i]] = value;
        let model = CplModel::new(self.model.theta().to_vec(), w).expect("valid fixture edit");
        Self { model, ..self.clone() }
    }

    pub fn with_theta(&self, idx: usize, value: f64) -> Self {
        let mut theta = self.model.theta().to_vec();
        theta[idx] = value;
        let model = CplModel::new(theta, self.model.w().to_owned()).expect("valid fixture edit");
        Self { model, ..self.clone() }
    }
}

pub fn toy_fixture() -> ToyFixture {
    let theta = vec![0.5, 0.5, 0.0, 0.0, 0.0, 0.1];
    let mut w = Array2::zeros((6, 6));
    for j in [B, C, D, E] {
        w[[j, A]] = -1.0;
    }
    w[[C, B]] = 1.0;
    w[[A, B]] = -1.0;
    w[[A, C]] = -1.0;
    let model = CplModel::new(theta, w).expect("fixture is a valid model");

    let mut costs = [[1.0; 5]; 5];
    for (x, row) in costs.iter_mut().enumerate() {
        row[x] = 0.0;
    }
    let mut set = |x: usize, y: usize, v: f64| {
        costs[x][y] = v;
        costs[y][x] = v;
    };
    set(A, B, 1.0);
    set(A, C, 1.0);
    set(A, D, 0.25);
    set(A, E, 0.25);
    set(B, D, 1.0 / 3.0);
    set(C, E, 1.0 / 3.0);

    let modes = ModeDistribution::new(vec![(vec![A], 0.5), (vec![B, C], 0.5)])
        .expect("two equiprobable modes");
    ToyFixture {
        model,
        modes,
        costs,
        penalty: 1.0,
    }
}
