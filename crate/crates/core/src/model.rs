//! The contextual Plackett-Luce decision model.
//!
//! A model over `k` candidates carries a unary score vector `theta` of length
//! `k + 1` (the last entry scores EOS) and an interaction matrix `w` of shape
//! `(k + 1) x (k + 1)`, where `w[[j, i]]` is the logit increment applied to
//! candidate `j` once `i` has been selected. Given a selected set `S`, the
//! contextual logits are `theta + sum_{i in S} w[.., i]` and the next element
//! is drawn from a softmax over the unselected entries (EOS always included).
//!
//! The interaction matrix is stored column-major so that the per-step update
//! `logits += w[.., j]` streams one contiguous column.

use ndarray::{Array2, ShapeBuilder};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Anything that can produce contextual logits by accumulating interaction
/// columns on top of a unary base.
pub trait LogitSource {
    /// Number of real candidates `k` (EOS excluded).
    fn num_candidates(&self) -> usize;
    /// Unary scores, length `k + 1`.
    fn unary(&self) -> &[f64];
    /// `logits += w[.., i]` for a real candidate `i`.
    fn add_interactions(&self, i: usize, logits: &mut [f64]);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct CplModel {
    k: usize,
    theta: Vec<f64>,
    w: Array2<f64>,
}

/// On-disk layout: `{"k": int, "theta": [...], "w": [[...], ...]}` with `w` row-major.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    k: usize,
    theta: Vec<f64>,
    w: Vec<Vec<f64>>,
}

impl TryFrom<ModelFile> for CplModel {
    type Error = Error;

    fn try_from(file: ModelFile) -> Result<Self> {
        let n = file.theta.len();
        if file.k + 1 != n {
            return Err(Error::InvalidModel(format!(
                "k = {} but theta has {} entries",
                file.k, n
            )));
        }
        if file.w.len() != n || file.w.iter().any(|row| row.len() != n) {
            return Err(Error::ShapeMismatch(format!("w must be {n}x{n}")));
        }
        let w = Array2::from_shape_fn((n, n), |(j, i)| file.w[j][i]);
        CplModel::new(file.theta, w)
    }
}

impl From<CplModel> for ModelFile {
    fn from(model: CplModel) -> Self {
        let w = model.w.rows().into_iter().map(|r| r.to_vec()).collect();
        ModelFile {
            k: model.k,
            theta: model.theta,
            w,
        }
    }
}

impl CplModel {
    /// Validates and builds a model. The EOS row and column of `w` must be zero.
    pub fn new(theta: Vec<f64>, w: Array2<f64>) -> Result<Self> {
        let n = theta.len();
        if n < 2 {
            return Err(Error::InvalidModel(
                "need at least one candidate plus EOS".into(),
            ));
        }
        if w.dim() != (n, n) {
            return Err(Error::ShapeMismatch(format!(
                "w is {:?}, expected ({n}, {n})",
                w.dim()
            )));
        }
        if theta.iter().chain(w.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("non-finite parameter".into()));
        }
        let k = n - 1;
        if w.row(k).iter().any(|&v| v != 0.0) || w.column(k).iter().any(|&v| v != 0.0) {
            return Err(Error::InvalidModel(
                "EOS row and column of w must be zero".into(),
            ));
        }
        let mut stored = Array2::zeros((n, n).f());
        stored.assign(&w);
        Ok(Self { k, theta, w: stored })
    }

    /// A model with no pairwise interactions: a classical Plackett-Luce model.
    pub fn unary_only(theta: Vec<f64>) -> Result<Self> {
        let n = theta.len();
        Self::new(theta, Array2::zeros((n, n)))
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Index of the EOS pseudo-candidate.
    pub fn eos(&self) -> usize {
        self.k
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn w(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    fn column(&self, i: usize) -> &[f64] {
        self.w
            .column(i)
            .to_slice()
            .expect("interaction matrix is stored column-major")
    }

    /// The empty selection; its logits equal `theta`.
    pub fn init_state(&self) -> SelectionState {
        SelectionState {
            selected: Vec::new(),
            mask: vec![false; self.k + 1],
            logits: self.theta.clone(),
        }
    }

    fn check_advance(&self, state: &SelectionState, j: usize) -> Result<()> {
        if j == self.k {
            return Err(Error::SelectingEos);
        }
        if j > self.k {
            return Err(Error::IndexOutOfRange { index: j, k: self.k });
        }
        if state.mask[j] {
            return Err(Error::AlreadySelected(j));
        }
        Ok(())
    }

    /// Returns the state reached by selecting `j`: `logits + w[.., j]`.
    pub fn advance(&self, state: &SelectionState, j: usize) -> Result<SelectionState> {
        let mut next = state.clone();
        self.advance_in_place(&mut next, j)?;
        Ok(next)
    }

    pub fn advance_in_place(&self, state: &mut SelectionState, j: usize) -> Result<()> {
        self.check_advance(state, j)?;
        for (l, &c) in state.logits.iter_mut().zip(self.column(j)) {
            *l += c;
        }
        state.mask[j] = true;
        state.selected.push(j);
        Ok(())
    }

    /// `theta + sum_{i in selected} w[.., i]`, summed from scratch in the given order.
    pub fn recompute_logits(&self, selected: &[usize]) -> Result<Vec<f64>> {
        validate_indices(selected, self.k)?;
        let mut logits = self.theta.clone();
        for &i in selected {
            for (l, &c) in logits.iter_mut().zip(self.column(i)) {
                *l += c;
            }
        }
        Ok(logits)
    }

    /// Greedy decoding from the empty selection.
    pub fn greedy_decode(&self, max_steps: usize) -> DecodePath {
        self.greedy_from(self.init_state(), max_steps)
    }

    /// Greedy continuation of an existing selection. The returned path lists
    /// the pre-selected prefix followed by the decoded elements; step
    /// log-probabilities cover only the decoded steps. `max_steps` bounds the
    /// total number of selected candidates.
    pub fn greedy_from(&self, mut state: SelectionState, max_steps: usize) -> DecodePath {
        let mut steps = Vec::new();
        let mut terminated = false;
        while state.selected.len() < max_steps {
            let (j, lp) = state.argmax_log_prob();
            steps.push(lp);
            if j == self.k {
                terminated = true;
                break;
            }
            self.advance_in_place(&mut state, j)
                .expect("argmax only returns unselected candidates");
        }
        DecodePath::new(state.selected, terminated, steps)
    }

    /// Reference decoder that rebuilds the logits from scratch at every step.
    /// Same output as [`CplModel::greedy_decode`], at `O(|S| k)` per step.
    pub fn decode_recompute(&self, max_steps: usize) -> DecodePath {
        let mut selected: Vec<usize> = Vec::new();
        let mut mask = vec![false; self.k + 1];
        let mut steps = Vec::new();
        let mut terminated = false;
        while selected.len() < max_steps {
            let logits = self
                .recompute_logits(&selected)
                .expect("decoder maintains a duplicate-free selection");
            let state = SelectionState {
                selected: Vec::new(),
                mask: mask.clone(),
                logits,
            };
            let (j, lp) = state.argmax_log_prob();
            steps.push(lp);
            if j == self.k {
                terminated = true;
                break;
            }
            mask[j] = true;
            selected.push(j);
        }
        DecodePath::new(selected, terminated, steps)
    }

    /// Ancestral sampling with logits divided by `temperature`. Recorded step
    /// log-probabilities are under the untempered model.
    pub fn sample_decode<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        temperature: f64,
        max_steps: usize,
    ) -> Result<DecodePath> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::InvalidTemperature(temperature));
        }
        let mut state = self.init_state();
        let mut steps = Vec::new();
        let mut terminated = false;
        let mut weights = vec![0.0; self.k + 1];
        while state.selected.len() < max_steps {
            let max = state.max_logit();
            let mut total = 0.0;
            for (j, wj) in weights.iter_mut().enumerate() {
                *wj = if state.mask[j] {
                    0.0
                } else {
                    ((state.logits[j] - max) / temperature).exp()
                };
                total += *wj;
            }
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut choice = None;
            for (j, &wj) in weights.iter().enumerate() {
                if wj == 0.0 {
                    continue;
                }
                acc += wj;
                choice = Some(j);
                if u < acc {
                    break;
                }
            }
            let j = choice.expect("EOS always carries positive mass");
            steps.push(state.log_prob(j));
            if j == self.k {
                terminated = true;
                break;
            }
            self.advance_in_place(&mut state, j)?;
        }
        Ok(DecodePath::new(state.selected, terminated, steps))
    }

    /// `sum_t log P(i_t | i_<t)`, plus `log P(EOS | sequence)` when requested.
    pub fn sequence_log_prob(&self, sequence: &[usize], include_eos: bool) -> Result<f64> {
        validate_indices(sequence, self.k)?;
        let mut state = self.init_state();
        let mut total = 0.0;
        for &i in sequence {
            total += state.log_prob(i);
            self.advance_in_place(&mut state, i)?;
        }
        if include_eos {
            total += state.log_prob(self.k);
        }
        Ok(total)
    }
}

impl LogitSource for CplModel {
    fn num_candidates(&self) -> usize {
        self.k
    }

    fn unary(&self) -> &[f64] {
        &self.theta
    }

    fn add_interactions(&self, i: usize, logits: &mut [f64]) {
        for (l, &c) in logits.iter_mut().zip(self.column(i)) {
            *l += c;
        }
    }
}

/// Rejects duplicates and anything outside `[0, k)`.
pub(crate) fn validate_indices(indices: &[usize], k: usize) -> Result<()> {
    let mut seen = vec![false; k];
    for &i in indices {
        if i >= k {
            return Err(Error::IndexOutOfRange { index: i, k });
        }
        if seen[i] {
            return Err(Error::DuplicateIndex(i));
        }
        seen[i] = true;
    }
    Ok(())
}

/// A partial selection together with its contextual logits.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionState {
    selected: Vec<usize>,
    mask: Vec<bool>,
    logits: Vec<f64>,
}

impl SelectionState {
    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    /// `mask[j]` is true iff `j` is selected; the EOS entry is always false.
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn is_selected(&self, j: usize) -> bool {
        self.mask[j]
    }

    fn max_logit(&self) -> f64 {
        masked_max(&self.logits, &self.mask)
    }

    /// Softmax over unselected entries; selected entries are exactly zero.
    pub fn next_distribution(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.logits.len()];
        masked_softmax(&self.logits, &self.mask, &mut p);
        p
    }

    /// `log P(j | S)`; `-inf` for selected entries.
    pub fn log_prob(&self, j: usize) -> f64 {
        if self.mask[j] {
            return f64::NEG_INFINITY;
        }
        self.logits[j] - masked_logsumexp(&self.logits, &self.mask)
    }

    /// [`SelectionState::argmax`] with its log-probability. Equals
    /// `log_prob(argmax())` but reuses the maximum instead of rescanning.
    pub fn argmax_log_prob(&self) -> (usize, f64) {
        let j = self.argmax();
        let max = self.logits[j];
        let sum: f64 = self
            .logits
            .iter()
            .zip(&self.mask)
            .map(|(&l, &m)| if m { 0.0 } else { (l - max).exp() })
            .sum();
        (j, max - (max + sum.ln()))
    }

    /// Highest unselected logit; lowest index wins ties, so EOS (the last
    /// entry) loses every exact tie.
    pub fn argmax(&self) -> usize {
        let mut best = self.logits.len() - 1;
        let mut best_val = f64::NEG_INFINITY;
        for (j, (&l, &m)) in self.logits.iter().zip(&self.mask).enumerate() {
            if !m && l > best_val {
                best = j;
                best_val = l;
            }
        }
        best
    }
}

pub(crate) fn masked_max(logits: &[f64], mask: &[bool]) -> f64 {
    logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| !m)
        .fold(f64::NEG_INFINITY, |a, (&l, _)| a.max(l))
}

pub(crate) fn masked_logsumexp(logits: &[f64], mask: &[bool]) -> f64 {
    let max = masked_max(logits, mask);
    let sum: f64 = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| !m)
        .map(|(&l, _)| (l - max).exp())
        .sum();
    max + sum.ln()
}

/// Max-subtracted softmax restricted to unmasked entries.
pub(crate) fn masked_softmax(logits: &[f64], mask: &[bool], out: &mut [f64]) {
    let max = masked_max(logits, mask);
    let mut sum = 0.0;
    for ((o, &l), &m) in out.iter_mut().zip(logits).zip(mask) {
        *o = if m { 0.0 } else { (l - max).exp() };
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// The output of a decoder run.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodePath {
    pub indices: Vec<usize>,
    pub terminated_by_eos: bool,
    pub step_log_probs: Vec<f64>,
    pub total_log_prob: f64,
}

impl DecodePath {
    fn new(indices: Vec<usize>, terminated_by_eos: bool, step_log_probs: Vec<f64>) -> Self {
        let total_log_prob = step_log_probs.iter().sum();
        Self {
            indices,
            terminated_by_eos,
            step_log_probs,
            total_log_prob,
        }
    }
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;
    use crate::benchgen::toy::{toy_fixture, A, B, C, D, E};
    use crate::seed::rng_for;

    // Independent softmax, written without the model's helpers.
    fn softmax_of(values: &[f64]) -> Vec<f64> {
        let z: f64 = values.iter().map(|v| v.exp()).sum();
        values.iter().map(|v| v.exp() / z).collect()
    }

    fn random_model(k: usize, seed: u64) -> CplModel {
        let mut rng = rng_for(&[seed]);
        let n = k + 1;
        let theta = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let w = Array2::from_shape_fn((n, n), |(j, i)| {
            if j == k || i == k {
                0.0
            } else {
                rng.random_range(-1.5..1.5)
            }
        });
        CplModel::new(theta, w).unwrap()
    }

    #[test]
    fn fused_argmax_log_prob_is_bit_identical() {
        for seed in 0..20 {
            let m = random_model(40, seed);
            let mut state = m.init_state();
            for j in [3, 17, 0, 39, 22] {
                let (a, lp) = state.argmax_log_prob();
                assert_eq!(a, state.argmax());
                assert_eq!(lp.to_bits(), state.log_prob(a).to_bits());
                m.advance_in_place(&mut state, j).unwrap();
            }
        }
    }

    #[test]
    fn init_state_matches_theta() {
        let toy = toy_fixture().model;
        assert_eq!(toy.init_state().logits(), &[0.5, 0.5, 0.0, 0.0, 0.0, 0.1]);

        let zero = CplModel::unary_only(vec![0.0; 4]).unwrap();
        assert!(zero.init_state().logits().iter().all(|&l| l == 0.0));

        let m = random_model(8, 3);
        for (a, b) in m.init_state().logits().iter().zip(m.theta()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn next_distribution_examples() {
        let uniform = CplModel::unary_only(vec![0.0; 4]).unwrap();
        assert_eq!(uniform.init_state().next_distribution(), vec![0.25; 4]);

        let toy = toy_fixture().model;
        let p = toy.init_state().next_distribution();
        let oracle = softmax_of(&[0.5, 0.5, 0.0, 0.0, 0.0, 0.1]);
        assert!((p[A] - oracle[0]).abs() < 1e-12);
        assert!((p[A] - 0.2227).abs() < 5e-5);

        let after_a = toy.advance(&toy.init_state(), A).unwrap();
        let p = after_a.next_distribution();
        assert_eq!(p[A], 0.0);
        let oracle = softmax_of(&[-0.5, -1.0, -1.0, -1.0, 0.1]);
        assert!((p[toy.eos()] - oracle[4]).abs() < 1e-12);
        assert!((p[toy.eos()] - 0.3926).abs() < 5e-5);
    }

    #[test]
    fn advance_examples() {
        let toy = toy_fixture().model;
        let s = toy.advance(&toy.init_state(), A).unwrap();
        let l = s.logits();
        assert_eq!(&l[B..], &[-0.5, -1.0, -1.0, -1.0, 0.1]);
        assert!([B, C, D, E].iter().all(|&j| l[j] < l[toy.eos()]));

        let s = toy.advance(&toy.init_state(), B).unwrap();
        let l = s.logits();
        assert_eq!((l[C], l[A], l[D], l[E], l[toy.eos()]), (1.0, -0.5, 0.0, 0.0, 0.1));

        let flat = CplModel::unary_only(vec![0.3, -0.2, 0.7, 0.0]).unwrap();
        let s = flat.advance(&flat.init_state(), 1).unwrap();
        assert_eq!(s.logits(), flat.theta());
    }

    #[test]
    fn advance_errors() {
        let toy = toy_fixture().model;
        let s = toy.init_state();
        assert!(matches!(toy.advance(&s, toy.eos()), Err(Error::SelectingEos)));
        let s = toy.advance(&s, C).unwrap();
        assert!(matches!(toy.advance(&s, C), Err(Error::AlreadySelected(2))));
        assert!(matches!(
            toy.advance(&s, 9),
            Err(Error::IndexOutOfRange { index: 9, k: 5 })
        ));
    }

    #[test]
    fn greedy_examples() {
        let toy = toy_fixture().model;
        let path = toy.greedy_decode(toy.k());
        assert_eq!(path.indices, vec![A]);
        assert!(path.terminated_by_eos);
        assert_eq!(path.step_log_probs.len(), 2);

        let forced = toy.advance(&toy.init_state(), B).unwrap();
        let path = toy.greedy_from(forced, toy.k());
        assert_eq!(path.indices, vec![B, C]);
        assert!(path.terminated_by_eos);

        let eos_heavy = CplModel::unary_only(vec![0.0, 0.0, 0.0, 0.0, 10.0]).unwrap();
        let path = eos_heavy.greedy_decode(4);
        assert!(path.indices.is_empty());
        assert!(path.terminated_by_eos);
    }

    #[test]
    fn greedy_respects_max_steps() {
        let m = CplModel::unary_only(vec![1.0, 2.0, 3.0, -5.0]).unwrap();
        let path = m.greedy_decode(2);
        assert_eq!(path.indices, vec![2, 1]);
        assert!(!path.terminated_by_eos);
    }

    #[test]
    fn sample_decode_low_temperature_is_greedy() {
        for seed in 0..20 {
            let m = random_model(12, seed);
            let mut rng = rng_for(&[seed, 99]);
            let sampled = m.sample_decode(&mut rng, 1e-6, m.k()).unwrap();
            assert_eq!(sampled, m.greedy_decode(m.k()));
        }
    }

    #[test]
    fn sample_decode_first_step_frequency() {
        let toy = toy_fixture().model;
        let mut rng = rng_for(&[2024]);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| {
                let path = toy.sample_decode(&mut rng, 1.0, 1).unwrap();
                path.indices.first() == Some(&A)
            })
            .count();
        let freq = hits as f64 / n as f64;
        let exact = softmax_of(&[0.5, 0.5, 0.0, 0.0, 0.0, 0.1])[0];
        assert!((freq - exact).abs() < 0.01, "freq {freq} vs {exact}");
    }

    #[test]
    fn sample_decode_is_deterministic_and_validates() {
        let m = random_model(10, 5);
        let a = m.sample_decode(&mut rng_for(&[1]), 1.0, 10).unwrap();
        let b = m.sample_decode(&mut rng_for(&[1]), 1.0, 10).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            m.sample_decode(&mut rng_for(&[1]), 0.0, 10),
            Err(Error::InvalidTemperature(_))
        ));
        assert!(m.sample_decode(&mut rng_for(&[1]), -1.0, 10).is_err());
    }

    #[test]
    fn sequence_log_prob_examples() {
        let toy = toy_fixture().model;
        let lp = toy.sequence_log_prob(&[A], true).unwrap();
        let p1 = softmax_of(&[0.5, 0.5, 0.0, 0.0, 0.0, 0.1])[0];
        let p2 = softmax_of(&[-0.5, -1.0, -1.0, -1.0, 0.1])[4];
        assert!((lp - (p1.ln() + p2.ln())).abs() < 1e-12);
        assert!((lp + 2.4369).abs() < 1e-3);

        assert_eq!(toy.sequence_log_prob(&[], false).unwrap(), 0.0);
        assert!(matches!(
            toy.sequence_log_prob(&[A, A], false),
            Err(Error::DuplicateIndex(0))
        ));
        assert!(matches!(
            toy.sequence_log_prob(&[5], false),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn recompute_examples() {
        let toy = toy_fixture().model;
        assert_eq!(toy.recompute_logits(&[]).unwrap(), toy.theta());
        let inc = toy.advance(&toy.init_state(), B).unwrap();
        let scratch = toy.recompute_logits(&[B]).unwrap();
        for (a, b) in inc.logits().iter().zip(&scratch) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert!(matches!(
            toy.recompute_logits(&[B, B]),
            Err(Error::DuplicateIndex(1))
        ));
    }

    #[test]
    fn recompute_is_order_invariant() {
        let m = random_model(32, 11);
        let set = [3usize, 17, 0, 29, 8, 12, 21, 5, 30, 14];
        let mut rev = set;
        rev.reverse();
        let a = m.recompute_logits(&set).unwrap();
        let b = m.recompute_logits(&rev).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn decode_recompute_matches_greedy() {
        let toy = toy_fixture().model;
        assert_eq!(toy.decode_recompute(5), toy.greedy_decode(5));
        for seed in 0..50 {
            let m = random_model(64, 1000 + seed);
            assert_eq!(m.decode_recompute(64), m.greedy_decode(64));
        }
    }

    #[test]
    fn json_round_trip_and_eos_validation() {
        let toy = toy_fixture().model;
        let json = toy.to_json().unwrap();
        assert!(json.starts_with("{\"k\":5,\"theta\":"));
        assert_eq!(CplModel::from_json(&json).unwrap(), toy);

        let bad = r#"{"k":1,"theta":[0.0,0.0],"w":[[0.0,1.0],[0.0,0.0]]}"#;
        assert!(matches!(
            CplModel::from_json(bad),
            Err(Error::Json(_))
        ));
        let bad_w = Array2::from_shape_vec((2, 2), vec![0.0, 0.0, 0.5, 0.0]).unwrap();
        assert!(matches!(
            CplModel::new(vec![0.0, 0.0], bad_w),
            Err(Error::InvalidModel(_))
        ));
    }
}
