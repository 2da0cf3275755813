//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::Rng;

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Largest relative error between `analytic` and central differences of
/// `loss_fn` over `samples` randomly chosen coordinates (all coordinates when
/// `samples` is at least the parameter count).
pub fn finite_difference_check<F, R>(
    mut loss_fn: F,
    params: &[f64],
    analytic: &[f64],
    eps: f64,
    samples: usize,
    rng: &mut R,
) -> f64
where
    F: FnMut(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    assert_eq!(params.len(), analytic.len(), "gradient length must match parameters");
    assert!(eps > 0.0, "step size must be positive");
    let coords: Vec<usize> = if samples >= params.len() {
        (0..params.len()).collect()
    } else {
        sample(rng, params.len(), samples).into_vec()
    };
    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for i in coords {
        probe[i] = params[i] + eps;
        let up = loss_fn(&probe);
        probe[i] = params[i] - eps;
        let down = loss_fn(&probe);
        probe[i] = params[i];
        worst = worst.max(relative_error(analytic[i], (up - down) / (2.0 * eps)));
    }
    worst
}
