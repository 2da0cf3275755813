//! Negative log-likelihood objectives with analytic gradients through the
//! masked softmax. Gradients are reported with respect to `theta` and `W`; a
//! step under prefix `S` with logit gradient `g` adds `g` to `grad_theta` and
//! to every column of `grad_w` indexed by `S` (EOS row excluded).

use ndarray::{Array2, ShapeBuilder};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{masked_logsumexp, masked_softmax, validate_indices, LogitSource};

/// A target sequence in its canonical order; the terminating EOS is implicit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderedTarget {
    sequence: Vec<usize>,
}

impl OrderedTarget {
    pub fn new(sequence: Vec<usize>, k: usize) -> Result<Self> {
        validate_indices(&sequence, k)?;
        Ok(Self { sequence })
    }

    pub fn sequence(&self) -> &[usize] {
        &self.sequence
    }
}

/// A target set; stored sorted so that listing order never matters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnorderedTarget {
    set: Vec<usize>,
}

impl UnorderedTarget {
    pub fn new(mut set: Vec<usize>, k: usize, allow_empty: bool) -> Result<Self> {
        validate_indices(&set, k)?;
        if set.is_empty() && !allow_empty {
            return Err(Error::InvalidConfig("empty target set".into()));
        }
        set.sort_unstable();
        Ok(Self { set })
    }

    pub fn set(&self) -> &[usize] {
        &self.set
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    pub grad_theta: Vec<f64>,
    /// Column-major, shape `(k + 1, k + 1)`.
    pub grad_w: Array2<f64>,
    pub step_count: usize,
}

impl LossReport {
    pub fn zeros(k: usize) -> Self {
        Self {
            loss: 0.0,
            grad_theta: vec![0.0; k + 1],
            grad_w: Array2::zeros((k + 1, k + 1).f()),
            step_count: 0,
        }
    }

    pub fn k(&self) -> usize {
        self.grad_theta.len() - 1
    }

    /// Adds `scale` times one step's loss and gradient taken under `prefix`.
    pub fn add_step(&mut self, prefix: &[usize], step: &StepGrad, scale: f64) {
        let k = self.k();
        self.loss += scale * step.loss;
        for (t, &g) in self.grad_theta.iter_mut().zip(&step.grad_logits) {
            *t += scale * g;
        }
        for &i in prefix {
            let mut col = self.grad_w.column_mut(i);
            let col = col.as_slice_mut().expect("column-major");
            for (c, &g) in col[..k].iter_mut().zip(&step.grad_logits[..k]) {
                *c += scale * g;
            }
        }
        self.step_count += 1;
    }

    /// Adds `scale` times another report.
    pub fn merge(&mut self, other: &LossReport, scale: f64) {
        self.loss += scale * other.loss;
        for (a, &b) in self.grad_theta.iter_mut().zip(&other.grad_theta) {
            *a += scale * b;
        }
        self.grad_w.scaled_add(scale, &other.grad_w);
        self.step_count += other.step_count;
    }
}

/// Loss and logit gradient of a single decision step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepGrad {
    pub loss: f64,
    pub grad_logits: Vec<f64>,
}

/// `-sum_t w_t log p[t] + not_eos_weight * (-log(1 - p[EOS]))` under the
/// masked softmax, with gradient `(sum w) p - sum w_t e_t` plus the EOS term.
fn step_terms(logits: &[f64], mask: &[bool], targets: &[(usize, f64)], not_eos_weight: f64) -> StepGrad {
    let eos = logits.len() - 1;
    let mut p = vec![0.0; logits.len()];
    masked_softmax(logits, mask, &mut p);
    let lse = masked_logsumexp(logits, mask);
    let total: f64 = targets.iter().map(|&(_, w)| w).sum();
    let mut loss = 0.0;
    let mut grad: Vec<f64> = p.iter().map(|&pj| total * pj).collect();
    for &(t, w) in targets {
        loss += w * (lse - logits[t]);
        grad[t] -= w;
    }
    if not_eos_weight > 0.0 {
        let mut no_eos = mask.to_vec();
        no_eos[eos] = true;
        let lse_rest = masked_logsumexp(logits, &no_eos);
        loss += not_eos_weight * (lse - lse_rest);
        let pe = p[eos];
        grad[eos] += not_eos_weight * pe;
        for j in (0..eos).filter(|&j| !mask[j]) {
            grad[j] -= not_eos_weight * pe * (logits[j] - lse_rest).exp();
        }
    }
    StepGrad { loss, grad_logits: grad }
}

fn prefix_state<M: LogitSource + ?Sized>(model: &M, prefix: &[usize]) -> (Vec<f64>, Vec<bool>) {
    let k = model.num_candidates();
    let mut logits = model.unary().to_vec();
    let mut mask = vec![false; k + 1];
    for &i in prefix {
        model.add_interactions(i, &mut logits);
        mask[i] = true;
    }
    (logits, mask)
}

fn check_targets(targets: &[(usize, f64)], mask: &[bool]) -> Result<()> {
    let k = mask.len() - 1;
    for &(t, w) in targets {
        if t > k {
            return Err(Error::IndexOutOfRange { index: t, k });
        }
        if mask[t] {
            return Err(Error::TargetSelected(t));
        }
        if !(w > 0.0 && w.is_finite()) {
            return Err(Error::InvalidConfig(format!("target weight {w} must be positive")));
        }
    }
    Ok(())
}

/// One weighted cross-entropy step under the given prefix.
pub fn masked_ce_step<M: LogitSource + ?Sized>(
    model: &M,
    prefix: &[usize],
    targets: &[(usize, f64)],
) -> Result<StepGrad> {
    validate_indices(prefix, model.num_candidates())?;
    let (logits, mask) = prefix_state(model, prefix);
    check_targets(targets, &mask)?;
    Ok(step_terms(&logits, &mask, targets, 0.0))
}

/// Teacher-forced sequence loss for one ordering, including the final EOS
/// step; `early_eos` penalizes EOS mass on every non-terminal step.
fn forced_sequence<M: LogitSource + ?Sized>(
    model: &M,
    sequence: &[usize],
    early_eos: f64,
    final_eos: f64,
    scale: f64,
    report: &mut LossReport,
) {
    let eos = model.num_candidates();
    let mut logits = model.unary().to_vec();
    let mut mask = vec![false; eos + 1];
    let steps = (sequence.len() + 1) as f64;
    for (t, &j) in sequence.iter().enumerate() {
        let step = step_terms(&logits, &mask, &[(j, 1.0)], early_eos);
        report.add_step(&sequence[..t], &step, scale / steps);
        model.add_interactions(j, &mut logits);
        mask[j] = true;
    }
    let step = if final_eos > 0.0 {
        step_terms(&logits, &mask, &[(eos, final_eos)], 0.0)
    } else {
        StepGrad {
            loss: 0.0,
            grad_logits: vec![0.0; eos + 1],
        }
    };
    report.add_step(sequence, &step, scale / steps);
}

/// Mean per-step negative log-likelihood of the sequence followed by EOS.
pub fn ordered_loss<M: LogitSource + ?Sized>(model: &M, target: &OrderedTarget) -> Result<LossReport> {
    let k = model.num_candidates();
    validate_indices(target.sequence(), k)?;
    let mut report = LossReport::zeros(k);
    forced_sequence(model, target.sequence(), 0.0, 1.0, 1.0, &mut report);
    Ok(report)
}

/// Draws a context size uniformly from `0..=|S*|`, then a uniform subset of
/// that size.
pub fn sample_context<R: Rng + ?Sized>(target: &[usize], rng: &mut R) -> Vec<usize> {
    let size = rng.random_range(0..=target.len());
    let mut ctx: Vec<usize> = sample(rng, target.len(), size).into_iter().map(|i| target[i]).collect();
    ctx.sort_unstable();
    ctx
}

/// Loss of one context: uniform targets over the remainder, or EOS when the
/// context already equals the target set.
pub fn context_step<M: LogitSource + ?Sized>(model: &M, target: &[usize], context: &[usize]) -> Result<StepGrad> {
    let eos = model.num_candidates();
    let remainder: Vec<usize> = target.iter().copied().filter(|t| !context.contains(t)).collect();
    let targets: Vec<(usize, f64)> = if remainder.is_empty() {
        vec![(eos, 1.0)]
    } else {
        let w = 1.0 / remainder.len() as f64;
        remainder.into_iter().map(|j| (j, w)).collect()
    };
    masked_ce_step(model, context, &targets)
}

/// Monte-Carlo estimate of the expected remainder loss over sampled contexts.
pub fn unordered_loss<M: LogitSource + ?Sized, R: Rng + ?Sized>(
    model: &M,
    target: &UnorderedTarget,
    num_contexts: usize,
    rng: &mut R,
) -> Result<LossReport> {
    if num_contexts == 0 {
        return Err(Error::InvalidConfig("num_contexts must be at least 1".into()));
    }
    let k = model.num_candidates();
    validate_indices(target.set(), k)?;
    let mut report = LossReport::zeros(k);
    let scale = 1.0 / num_contexts as f64;
    for _ in 0..num_contexts {
        let ctx = sample_context(target.set(), rng);
        let step = context_step(model, target.set(), &ctx)?;
        report.add_step(&ctx, &step, scale);
    }
    Ok(report)
}

/// Teacher forcing averaged over random orderings of the target set, with an
/// extra penalty on EOS probability before the set is complete.
pub fn permutation_averaged_loss<M: LogitSource + ?Sized, R: Rng + ?Sized>(
    model: &M,
    target: &UnorderedTarget,
    num_perms: usize,
    early_eos_weight: f64,
    final_eos_weight: f64,
    rng: &mut R,
) -> Result<LossReport> {
    if num_perms == 0 {
        return Err(Error::InvalidConfig("num_perms must be at least 1".into()));
    }
    if !(early_eos_weight >= 0.0 && final_eos_weight >= 0.0) {
        return Err(Error::InvalidConfig("EOS weights must be non-negative".into()));
    }
    let k = model.num_candidates();
    validate_indices(target.set(), k)?;
    let mut report = LossReport::zeros(k);
    let mut order = target.set().to_vec();
    let scale = 1.0 / num_perms as f64;
    for _ in 0..num_perms {
        order.shuffle(rng);
        forced_sequence(model, &order, early_eos_weight, final_eos_weight, scale, &mut report);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchgen::toy::{toy_fixture, A, B, C};
    use crate::model::CplModel;
    use crate::seed::rng_for;
    use crate::training::gradcheck::relative_error;
    use ndarray::Array2;

    fn ln_softmax_at(values: &[f64], idx: usize) -> f64 {
        let z: f64 = values.iter().map(|v| v.exp()).sum();
        (values[idx].exp() / z).ln()
    }

    fn random_model(k: usize, seed: u64) -> CplModel {
        let mut rng = rng_for(&[seed]);
        let theta = (0..=k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = Array2::from_shape_fn((k + 1, k + 1), |(j, i)| {
            if j == k || i == k {
                0.0
            } else {
                rng.random_range(-1.0..1.0)
            }
        });
        CplModel::new(theta, w).unwrap()
    }

    /// Central differences over every free entry of theta and W.
    fn check_model_gradient(model: &CplModel, report: &LossReport, loss: impl Fn(&CplModel) -> f64, tol: f64) {
        let k = model.k();
        let eps = 1e-5;
        let bump = |j: Option<usize>, idx: usize, d: f64| {
            let mut theta = model.theta().to_vec();
            let mut w = model.w().to_owned();
            match j {
                None => theta[idx] += d,
                Some(j) => w[[j, idx]] += d,
            }
            CplModel::new(theta, w).unwrap()
        };
        for i in 0..=k {
            let num = (loss(&bump(None, i, eps)) - loss(&bump(None, i, -eps))) / (2.0 * eps);
            assert!(relative_error(report.grad_theta[i], num) < tol, "theta[{i}]");
        }
        for j in 0..k {
            for i in 0..k {
                let num = (loss(&bump(Some(j), i, eps)) - loss(&bump(Some(j), i, -eps))) / (2.0 * eps);
                assert!(relative_error(report.grad_w[[j, i]], num) < tol, "w[{j}][{i}]");
            }
        }
        assert!(report.grad_w.row(k).iter().chain(report.grad_w.column(k).iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn two_way_softmax_step() {
        let model = CplModel::new(vec![0.0, 0.0], Array2::zeros((2, 2))).unwrap();
        let step = masked_ce_step(&model, &[], &[(0, 1.0)]).unwrap();
        assert!((step.loss - 2f64.ln()).abs() < 1e-15);
        assert_eq!(step.grad_logits, vec![-0.5, 0.5]);
    }

    #[test]
    fn toy_step_matches_independent_softmax() {
        let f = toy_fixture();
        let step = masked_ce_step(&f.model, &[B], &[(C, 1.0)]).unwrap();
        // unmasked logits after selecting b: a, c, d, e, EOS
        let remaining = [-0.5, 1.0, 0.0, 0.0, 0.1];
        assert!((step.loss + ln_softmax_at(&remaining, 1)).abs() < 1e-12);
        assert!(matches!(
            masked_ce_step(&f.model, &[B], &[(B, 1.0)]),
            Err(Error::TargetSelected(1))
        ));
    }

    #[test]
    fn step_gradient_matches_finite_differences() {
        let model = random_model(5, 1);
        let prefix = [3, 1];
        let targets = [(0, 0.25), (4, 0.75)];
        let step = masked_ce_step(&model, &prefix, &targets).unwrap();
        let mut report = LossReport::zeros(5);
        report.add_step(&prefix, &step, 1.0);
        check_model_gradient(&model, &report, |m| masked_ce_step(m, &prefix, &targets).unwrap().loss, 1e-5);
    }

    #[test]
    fn ordered_toy_value() {
        let f = toy_fixture();
        let r = ordered_loss(&f.model, &OrderedTarget::new(vec![A], 5).unwrap()).unwrap();
        let first = ln_softmax_at(&[0.5, 0.5, 0.0, 0.0, 0.0, 0.1], 0);
        let second = ln_softmax_at(&[-0.5, -1.0, -1.0, -1.0, 0.1], 4);
        assert!((r.loss + (first + second) / 2.0).abs() < 1e-12);
        assert!((r.loss - 1.2185).abs() < 1e-4);
        assert_eq!(r.step_count, 2);
    }

    #[test]
    fn empty_sequence_is_a_single_eos_step() {
        let model = random_model(4, 2);
        let r = ordered_loss(&model, &OrderedTarget::new(vec![], 4).unwrap()).unwrap();
        assert!((r.loss + model.init_state().log_prob(4)).abs() < 1e-12);
        assert_eq!(r.step_count, 1);
    }

    #[test]
    fn ordered_gradient_and_descent() {
        let model = random_model(6, 3);
        let target = OrderedTarget::new(vec![2, 5, 0], 6).unwrap();
        let r = ordered_loss(&model, &target).unwrap();
        check_model_gradient(&model, &r, |m| ordered_loss(m, &target).unwrap().loss, 1e-5);

        let lr = 1e-2;
        let theta: Vec<f64> = model.theta().iter().zip(&r.grad_theta).map(|(t, g)| t - lr * g).collect();
        let w = model.w() - &(&r.grad_w * lr);
        let stepped = CplModel::new(theta, w).unwrap();
        assert!(ordered_loss(&stepped, &target).unwrap().loss < r.loss);
    }

    #[test]
    fn full_target_context_is_eos_only() {
        let model = random_model(3, 4);
        let step = context_step(&model, &[0, 1, 2], &[0, 1, 2]).unwrap();
        let direct = masked_ce_step(&model, &[0, 1, 2], &[(3, 1.0)]).unwrap();
        assert_eq!(step, direct);
    }

    #[test]
    fn unordered_estimate_matches_enumeration() {
        let theta = vec![0.4, -0.3, 0.2];
        let model = CplModel::new(theta.clone(), Array2::zeros((3, 3))).unwrap();
        let target = UnorderedTarget::new(vec![0], 2, false).unwrap();
        // contexts: {} with prob 1/2 (target 0), {0} with prob 1/2 (target EOS)
        let exact = 0.5 * -ln_softmax_at(&theta, 0) + 0.5 * -ln_softmax_at(&[theta[1], theta[2]], 1);
        let r = unordered_loss(&model, &target, 10_000, &mut rng_for(&[5])).unwrap();
        assert!((r.loss - exact).abs() < 0.01);
    }

    #[test]
    fn unordered_matches_exhaustive_expectation() {
        let model = random_model(5, 6);
        let set = [0usize, 2, 3];
        let mut exact = 0.0;
        // size uniform over 0..=3, then uniform over subsets of that size
        for mask in 0u32..8 {
            let ctx: Vec<usize> = (0..3).filter(|b| mask >> b & 1 == 1).map(|b| set[b]).collect();
            let same_size = [1.0, 3.0, 3.0, 1.0][ctx.len()];
            let p = 0.25 / same_size;
            exact += p * context_step(&model, &set, &ctx).unwrap().loss;
        }
        let target = UnorderedTarget::new(set.to_vec(), 5, false).unwrap();
        let r = unordered_loss(&model, &target, 10_000, &mut rng_for(&[7])).unwrap();
        assert!((r.loss - exact).abs() < 0.01, "{} vs {exact}", r.loss);
    }

    #[test]
    fn unordered_is_order_invariant_and_differentiable() {
        let model = random_model(5, 8);
        let a = UnorderedTarget::new(vec![4, 1, 2], 5, false).unwrap();
        let b = UnorderedTarget::new(vec![1, 2, 4], 5, false).unwrap();
        let ra = unordered_loss(&model, &a, 16, &mut rng_for(&[9])).unwrap();
        let rb = unordered_loss(&model, &b, 16, &mut rng_for(&[9])).unwrap();
        assert_eq!(ra, rb);
        check_model_gradient(
            &model,
            &ra,
            |m| unordered_loss(m, &a, 16, &mut rng_for(&[9])).unwrap().loss,
            1e-5,
        );
    }

    #[test]
    fn single_element_permutation_average_is_a_no_op() {
        let model = random_model(4, 10);
        let t = UnorderedTarget::new(vec![2], 4, false).unwrap();
        let one = permutation_averaged_loss(&model, &t, 1, 5.0, 1.0, &mut rng_for(&[1])).unwrap();
        let many = permutation_averaged_loss(&model, &t, 10, 5.0, 1.0, &mut rng_for(&[2])).unwrap();
        assert!((one.loss - many.loss).abs() < 1e-12);
    }

    #[test]
    fn permutation_average_converges_to_exhaustive_mean() {
        let model = random_model(6, 11);
        let set = [1usize, 3, 4];
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let exact: f64 = perms
            .iter()
            .map(|p| {
                let seq = p.iter().map(|&i| set[i]).collect();
                ordered_loss(&model, &OrderedTarget::new(seq, 6).unwrap()).unwrap().loss
            })
            .sum::<f64>()
            / 6.0;
        let t = UnorderedTarget::new(set.to_vec(), 6, false).unwrap();
        let r = permutation_averaged_loss(&model, &t, 20_000, 0.0, 1.0, &mut rng_for(&[12])).unwrap();
        assert!((r.loss - exact).abs() < 0.01);
    }

    #[test]
    fn permutation_average_gradient() {
        let model = random_model(5, 13);
        let t = UnorderedTarget::new(vec![0, 3, 4], 5, false).unwrap();
        let r = permutation_averaged_loss(&model, &t, 10, 5.0, 1.0, &mut rng_for(&[14])).unwrap();
        check_model_gradient(
            &model,
            &r,
            |m| {
                permutation_averaged_loss(m, &t, 10, 5.0, 1.0, &mut rng_for(&[14]))
                    .unwrap()
                    .loss
            },
            1e-4,
        );
    }

    #[test]
    fn early_eos_penalty_value() {
        let model = random_model(3, 15);
        let t = UnorderedTarget::new(vec![1], 3, false).unwrap();
        let r = permutation_averaged_loss(&model, &t, 1, 5.0, 1.0, &mut rng_for(&[0])).unwrap();
        let s0 = model.init_state();
        let s1 = model.advance(&s0, 1).unwrap();
        let p_eos = s0.next_distribution()[3];
        let expected = (-s0.log_prob(1) + 5.0 * -(1.0 - p_eos).ln() - s1.log_prob(3)) / 2.0;
        assert!((r.loss - expected).abs() < 1e-12);
    }
}
