//! Checks every documented property of the five-element ambiguity fixture.

use serde::Serialize;

use crate::baselines::expected_matching_cost;
use crate::benchgen::toy::{ToyFixture, A, B, C, D, E, NAMES};
use crate::model::CplModel;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToyCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToyReport {
    pub checks: Vec<ToyCheck>,
    /// Expected matching costs of `{a}`, `{b, c}` and `{d, e}`.
    pub costs: [f64; 3],
}

impl ToyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn names(indices: &[usize]) -> String {
    let parts: Vec<&str> = indices.iter().map(|&i| NAMES.get(i).copied().unwrap_or("eos")).collect();
    format!("[{}]", parts.join(","))
}

fn forced(model: &CplModel, first: usize) -> Vec<usize> {
    let state = model.advance(&model.init_state(), first).expect("fixture index");
    model.greedy_from(state, model.k()).indices
}

pub fn verify_toy(fx: &ToyFixture) -> ToyReport {
    let model = &fx.model;
    let mut checks = Vec::new();
    let mut check = |name, passed, detail: String| checks.push(ToyCheck { name, passed, detail });

    let free = model.greedy_decode(model.k());
    check(
        "greedy_decode",
        free.indices == [A] && free.terminated_by_eos,
        format!("decoded {}", names(&free.indices)),
    );
    let from_b = forced(model, B);
    check(
        "forced_b_continuation",
        from_b == [B, C],
        format!("decoded {}", names(&from_b)),
    );

    let decodes: Vec<Vec<usize>> = std::iter::once(free.indices.clone())
        .chain([A, B, C].into_iter().map(|f| forced(model, f)))
        .collect();
    let hybrids = decodes.iter().any(|d| d.contains(&D) || d.contains(&E));
    check(
        "no_hybrid_elements",
        !hybrids,
        format!(
            "decodes {}",
            decodes.iter().map(|d| names(d)).collect::<Vec<_>>().join(" ")
        ),
    );

    let cost = |pred: &[usize]| expected_matching_cost(pred, &fx.modes, |&x, &y| fx.pair_cost(x, y), fx.penalty);
    let costs = [cost(&[A]), cost(&[B, C]), cost(&[D, E])];
    let expected = [1.0, 1.0, 23.0 / 24.0];
    let labels = ["{a}", "{b,c}", "{d,e}"];
    for ((c, e), label) in costs.iter().zip(expected).zip(labels) {
        check(
            "expected_matching_cost",
            (c - e).abs() <= 1e-12,
            format!("{label}: {c:.12}"),
        );
    }
    check(
        "hybrid_cost_is_lowest",
        costs[2] < costs[0] && costs[2] < costs[1],
        format!("{:.6} < {:.6}", costs[2], costs[0].min(costs[1])),
    );

    let eos = model.eos();
    let w = model.w();
    let eos_zero = (0..=eos).all(|j| w[[eos, j]] == 0.0 && w[[j, eos]] == 0.0);
    check("eos_row_and_column_zero", eos_zero, String::new());

    ToyReport { checks, costs }
}
