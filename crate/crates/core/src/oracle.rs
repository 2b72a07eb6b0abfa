//! Independent ground-truth machinery: exact endpoint enumeration on small
//! piecewise-linear networks, sampling-based Lipschitz lower bounds, and
//! finite-difference gradient checks.
//!
//! Everything here deliberately avoids the bound-propagation code paths it
//! is used to validate.

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_distr::{Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::model::Network;
use crate::preact::{Ball, LayerIntervals, Norm};

/// Exact element-wise extrema of the Jacobian over all endpoint assignments
/// of the unstable activation derivatives.
#[derive(Debug, Clone)]
pub struct PatternEnumeration {
    /// (hidden layer, neuron) pairs whose derivative range is not a point.
    pub unstable: Vec<(usize, usize)>,
    pub min: Array2<f64>,
    pub max: Array2<f64>,
}

impl PatternEnumeration {
    /// Number of endpoint assignments enumerated.
    pub fn pattern_count(&self) -> u64 {
        1u64 << self.unstable.len()
    }
}

pub const DEFAULT_ENUMERATION_CAP: usize = 16;

/// Enumerates all 2^m endpoint assignments of the unstable derivative
/// ranges and records the exact per-entry extrema of the Jacobian product.
///
/// Valid as an oracle because the Jacobian is multilinear in the diagonal
/// derivative entries, so per-entry extrema over independent interval
/// variables are attained at interval endpoints. Only piecewise-linear
/// activations are accepted: their derivative ranges are exactly the
/// two-point sets the enumeration walks.
pub fn enumerate_exact(
    net: &Network,
    li: &LayerIntervals,
    cap: usize,
) -> Result<PatternEnumeration> {
    for l in 1..net.depth() {
        let act = net.hidden_activation(l);
        if !act.is_piecewise_linear() {
            return Err(Error::NotPiecewiseLinear(act.name().to_string()));
        }
    }
    if !li.has_grad_ranges() {
        return Err(Error::InvalidArgument(
            "LayerIntervals missing derivative ranges".into(),
        ));
    }
    let mut unstable = Vec::new();
    for (idx, lb) in li.layers.iter().enumerate() {
        for r in 0..lb.grad_lower.len() {
            if lb.grad_lower[r] < lb.grad_upper[r] {
                unstable.push((idx + 1, r));
            }
        }
    }
    if unstable.len() > cap {
        return Err(Error::EnumerationCap {
            unstable: unstable.len(),
            cap,
        });
    }

    // Baseline diagonals: fixed neurons keep their (point) lower value.
    let mut diags: Vec<Array1<f64>> = li.layers.iter().map(|lb| lb.grad_lower.clone()).collect();
    let mut min: Option<Array2<f64>> = None;
    let mut max: Option<Array2<f64>> = None;
    let patterns = 1u64 << unstable.len();
    for bits in 0..patterns {
        for (bit, &(layer, r)) in unstable.iter().enumerate() {
            let lb = &li.layers[layer - 1];
            diags[layer - 1][r] = if bits >> bit & 1 == 1 {
                lb.grad_upper[r]
            } else {
                lb.grad_lower[r]
            };
        }
        let jac = product_with_diagonals(net, &diags);
        match (&mut min, &mut max) {
            (Some(mn), Some(mx)) => {
                mn.zip_mut_with(&jac, |m, &j| *m = m.min(j));
                mx.zip_mut_with(&jac, |m, &j| *m = m.max(j));
            }
            _ => {
                min = Some(jac.clone());
                max = Some(jac);
            }
        }
    }
    Ok(PatternEnumeration {
        unstable,
        min: min.unwrap(),
        max: max.unwrap(),
    })
}

fn product_with_diagonals(net: &Network, diags: &[Array1<f64>]) -> Array2<f64> {
    let h = net.depth();
    let mut jac = net.weight(h).clone();
    for l in (1..h).rev() {
        let scaled = &jac * &diags[l - 1];
        jac = scaled.dot(net.weight(l));
    }
    jac
}

/// Maximum sampled gradient norm over the ball (center always included):
/// a certified under-estimate of the true local Lipschitz constant.
pub fn sample_lipschitz_lower(
    net: &Network,
    ball: &Ball,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    if samples < 1 {
        return Err(Error::InvalidArgument("samples must be >= 1".into()));
    }
    let mut best = matrix_norm_lower(&net.jacobian_at(ball.center.view())?, ball.p);
    for _ in 1..samples {
        let x = sample_in_ball(ball, rng);
        let norm = matrix_norm_lower(&net.jacobian_at(x.view())?, ball.p);
        best = best.max(norm);
    }
    Ok(best)
}

/// Induced p-norm used on sampled Jacobians. For p=2 a few exact-norm
/// iterations suffice; under-estimation only makes the lower bound safer.
fn matrix_norm_lower(m: &Array2<f64>, p: Norm) -> f64 {
    match p {
        Norm::L1 => (0..m.ncols())
            .map(|k| m.column(k).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0f64, f64::max),
        Norm::LInf => (0..m.nrows())
            .map(|j| m.row(j).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0f64, f64::max),
        Norm::L2 => spectral_norm_power(m, 1e-12, 10_000).unwrap_or(0.0),
    }
}

/// Power iteration on MᵀM starting from the normalized all-ones vector.
pub(crate) fn spectral_norm_power(m: &Array2<f64>, tol: f64, max_iter: usize) -> Option<f64> {
    let n = m.ncols();
    if n == 0 || m.nrows() == 0 {
        return Some(0.0);
    }
    if m.iter().all(|&v| v == 0.0) {
        return Some(0.0);
    }
    let mut v = Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut sigma = 0.0f64;
    for _ in 0..max_iter {
        let w = m.dot(&v);
        let z = m.t().dot(&w);
        let zn = z.iter().map(|x| x * x).sum::<f64>().sqrt();
        if zn == 0.0 {
            return Some(0.0);
        }
        let new_sigma = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        let next = z.mapv(|x| x / zn);
        if (new_sigma - sigma).abs() <= tol * new_sigma.max(1.0) {
            return Some(new_sigma);
        }
        sigma = new_sigma;
        v = next;
    }
    None
}

/// Uniform sample from the ball. Per-coordinate uniform for ℓ∞, normalized
/// Gaussian with u^{1/n} radius for ℓ2, exponential-weights simplex method
/// for ℓ1.
pub fn sample_in_ball(ball: &Ball, rng: &mut impl Rng) -> Array1<f64> {
    let n = ball.center.len();
    let r = ball.radius;
    match ball.p {
        Norm::LInf => {
            Array1::from_shape_fn(n, |i| ball.center[i] + r * rng.random_range(-1.0..=1.0))
        }
        Norm::L2 => {
            let g = Array1::from_shape_fn(n, |_| {
                let v: f64 = rng.sample(StandardNormal);
                v
            });
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return ball.center.clone();
            }
            let u: f64 = rng.random_range(0.0..=1.0);
            let scale = r * u.powf(1.0 / n as f64) / norm;
            &ball.center + &g.mapv(|x| x * scale)
        }
        Norm::L1 => {
            let e = Array1::from_shape_fn(n, |_| {
                let v: f64 = rng.sample(Exp1);
                v
            });
            let extra: f64 = rng.sample(Exp1);
            let total = e.sum() + extra;
            Array1::from_shape_fn(n, |i| {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                ball.center[i] + sign * r * e[i] / total
            })
        }
    }
}

/// Central finite differences per input coordinate.
pub fn finite_diff_jacobian(net: &Network, x: &Array1<f64>, h: f64) -> Result<Array2<f64>> {
    if h <= 0.0 {
        return Err(Error::InvalidArgument("step must be positive".into()));
    }
    let mut jac = Array2::zeros((net.output_dim(), net.input_dim()));
    for k in 0..net.input_dim() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += h;
        xm[k] -= h;
        let (fp, _) = net.forward(xp.view())?;
        let (fm, _) = net.forward(xm.view())?;
        for j in 0..net.output_dim() {
            jac[[j, k]] = (fp[j] - fm[j]) / (2.0 * h);
        }
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, Layer};
    use crate::netgen;
    use crate::preact;
    use ndarray::{arr1, arr2};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn finite_diff_linear_net_is_exact() {
        let net = Network::new(vec![Layer::new(
            arr2(&[[2.0, -1.0], [0.5, 3.0]]),
            arr1(&[1.0, -1.0]),
            None,
        )])
        .unwrap();
        // any step is exact on a linear map; a large one avoids cancellation
        let jac = finite_diff_jacobian(&net, &arr1(&[0.3, 0.7]), 0.5).unwrap();
        let expected = arr2(&[[2.0, -1.0], [0.5, 3.0]]);
        for (a, b) in jac.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn finite_diff_matches_jacobian_on_smooth_net() {
        for (seed, act) in [(1u64, Activation::Sigmoid), (2, Activation::Tanh), (3, Activation::Arctan)] {
            let net = netgen::random_mlp(&[4, 6, 6, 5, 3], act, seed);
            let x = netgen::random_input(4, seed + 100);
            let fd = finite_diff_jacobian(&net, &x, 1e-4).unwrap();
            let jac = net.jacobian_at(x.view()).unwrap();
            let max_dev = fd
                .iter()
                .zip(jac.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(max_dev <= 1e-5, "deviation {max_dev} for {act:?}");
            // convergence: a smaller step should not be worse by much
            let fd2 = finite_diff_jacobian(&net, &x, 1e-5).unwrap();
            let max_dev2 = fd2
                .iter()
                .zip(jac.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(max_dev2 <= max_dev + 1e-9);
        }
    }

    #[test]
    fn finite_diff_matches_relu_away_from_kinks() {
        let net = netgen::random_mlp(&[4, 8, 8, 2], Activation::Relu, 17);
        // nudge until no pre-activation sits near a kink
        let mut x = netgen::random_input(4, 18);
        'outer: for bump in 0..50 {
            let (_, pre) = net.forward(x.view()).unwrap();
            if pre.iter().flatten().all(|v| v.abs() > 1e-3) {
                break 'outer;
            }
            x[bump % 4] += 7e-3;
        }
        let fd = finite_diff_jacobian(&net, &x, 1e-5).unwrap();
        let jac = net.jacobian_at(x.view()).unwrap();
        for (a, b) in fd.iter().zip(jac.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn enumeration_no_unstable_is_single_product() {
        let net = netgen::random_mlp(&[3, 4, 2], Activation::Relu, 4);
        let x = arr1(&[0.5, -0.25, 0.75]);
        let ball = Ball::new(x.clone(), 0.0, Norm::LInf).unwrap();
        let li = preact::bounded_intervals(&net, &ball).unwrap();
        let res = enumerate_exact(&net, &li, 16).unwrap();
        assert!(res.unstable.is_empty());
        assert_eq!(res.pattern_count(), 1);
        let jac = net.jacobian_at(x.view()).unwrap();
        for ((mn, mx), j) in res.min.iter().zip(res.max.iter()).zip(jac.iter()) {
            // at radius 0 the only kink risk is an exact zero pre-activation
            assert!((mn - j).abs() < 1e-12 && (mx - j).abs() < 1e-12);
        }
    }

    #[test]
    fn enumeration_rejects_smooth_and_cap() {
        let smooth = netgen::random_mlp(&[3, 4, 2], Activation::Tanh, 4);
        let ball = Ball::new(arr1(&[0.0, 0.0, 0.0]), 0.5, Norm::LInf).unwrap();
        let li = preact::bounded_intervals(&smooth, &ball).unwrap();
        assert!(matches!(
            enumerate_exact(&smooth, &li, 16),
            Err(Error::NotPiecewiseLinear(_))
        ));

        let wide = netgen::random_mlp(&[4, 24, 2], Activation::Relu, 4);
        let ball = Ball::new(arr1(&[0.0; 4]), 5.0, Norm::LInf).unwrap();
        let li = preact::bounded_intervals(&wide, &ball).unwrap();
        assert!(matches!(
            enumerate_exact(&wide, &li, 4),
            Err(Error::EnumerationCap { .. })
        ));
    }

    #[test]
    fn sampled_lower_linear_net_is_exact_norm() {
        let net = Network::new(vec![Layer::new(arr2(&[[3.0, -4.0]]), arr1(&[0.0]), None)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (p, expected) in [(Norm::L2, 5.0), (Norm::LInf, 7.0), (Norm::L1, 4.0)] {
            let ball = Ball::new(arr1(&[0.0, 0.0]), 0.3, p).unwrap();
            let got = sample_lipschitz_lower(&net, &ball, 8, &mut rng).unwrap();
            assert!((got - expected).abs() < 1e-9, "{p:?}: {got} vs {expected}");
        }
    }

    #[test]
    fn ball_samples_stay_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for p in [Norm::L1, Norm::L2, Norm::LInf] {
            let ball = Ball::new(arr1(&[1.0, -2.0, 0.5]), 0.7, p).unwrap();
            for _ in 0..5000 {
                let x = sample_in_ball(&ball, &mut rng);
                let d = &x - &ball.center;
                assert!(p.vector_norm(d.view()) <= 0.7 + 1e-12);
            }
        }
    }
}
