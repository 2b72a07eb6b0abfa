//! Certified local/global Lipschitz constants from Jacobian bounds.
//!
//! The worst-case matrix M = max(|L|, |U|) turns element-wise Jacobian
//! bounds into an induced-norm bound ‖M‖_p on the local Lipschitz constant.
//! For the ℓ∞ norm the bound is tightened per output row: columns whose
//! Jacobian sign is fixed are folded into a single reduced weight column and
//! re-bounded through the recursion instead of being worst-cased.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::jacbound::{
    self, fastlip, naive_global_lipschitz, recurjac_backward, recurjac_forward, BoundMethod,
    ForwardVariant, JacobianBounds, LevelBounds, RowContext,
};
use crate::model::Network;
use crate::preact::{self, Ball, LayerIntervals, Norm};

/// Element-wise max(|L|, |U|) of the full-Jacobian bounds.
#[derive(Debug, Clone)]
pub struct WorstCaseMatrix {
    pub m: Array2<f64>,
}

/// A certified Lipschitz bound with the configuration that produced it.
#[derive(Debug, Clone)]
pub struct LipschitzResult {
    pub value: f64,
    pub p: Norm,
    pub radius: f64,
    pub method: BoundMethod,
}

/// M_{j,k} = max(|L_{j,k}|, |U_{j,k}|) over the level-1 bounds.
pub fn worst_case_matrix(jb: &JacobianBounds) -> WorstCaseMatrix {
    let lb = jb.level1();
    let mut m = Array2::zeros(lb.lower.raw_dim());
    for ((&l, &u), out) in lb.lower.iter().zip(lb.upper.iter()).zip(m.iter_mut()) {
        *out = l.abs().max(u.abs());
    }
    WorstCaseMatrix { m }
}

/// Induced p-norm of a matrix: max column abs-sum (p=1), spectral norm via
/// power iteration (p=2), max row abs-sum (p=∞).
pub fn induced_norm(m: &ArrayView2<f64>, p: Norm) -> Result<f64> {
    match p {
        Norm::L1 => Ok((0..m.ncols())
            .map(|k| m.column(k).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0f64, f64::max)),
        Norm::LInf => Ok((0..m.nrows())
            .map(|j| m.row(j).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0f64, f64::max)),
        Norm::L2 => spectral_norm(m, 1e-10, 10_000),
    }
}

/// Power iteration on MᵀM seeded with the normalized all-ones vector. M is
/// entry-wise non-negative in our use, so the dominant eigenvector is
/// non-negative and the fixed seed always has positive overlap with it.
fn spectral_norm(m: &ArrayView2<f64>, tol: f64, max_iter: usize) -> Result<f64> {
    let n = m.ncols();
    if n == 0 || m.nrows() == 0 || m.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let mut v = Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut sigma = 0.0f64;
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let w = m.dot(&v);
        let z = m.t().dot(&w);
        let z_norm = z.iter().map(|x| x * x).sum::<f64>().sqrt();
        if z_norm == 0.0 {
            return Ok(0.0);
        }
        let next_sigma = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        residual = (next_sigma - sigma).abs();
        if residual <= tol * next_sigma.max(1.0) {
            return Ok(next_sigma);
        }
        sigma = next_sigma;
        v = z.mapv(|x| x / z_norm);
    }
    Err(Error::PowerIterationDiverged {
        residual,
        iterations: max_iter,
    })
}

/// ‖M‖_p upper bound on the local Lipschitz constant.
pub fn lipschitz_p(m: &WorstCaseMatrix, p: Norm) -> Result<f64> {
    induced_norm(&m.m.view(), p)
}

/// Refined ℓ∞ bound. Per output row, the columns split into sign-fixed
/// sets T± and the uncertain set T̃; the T̃ part keeps the worst-case M
/// entries while the sign-fixed part is collapsed into the reduced column
/// ŵ = Σ_{T+} W^(1)_{:,k} − Σ_{T−} W^(1)_{:,k} and re-bounded through the
/// recursion. Never worse than ‖M‖_∞.
pub fn lipschitz_inf_refined(
    net: &Network,
    jb: &JacobianBounds,
    li: &LayerIntervals,
) -> Result<f64> {
    refined_inf_with_level1(net, jb, li, jb.level1())
}

/// As [`lipschitz_inf_refined`], but taking the level-1 bounds used for the
/// sign split and the M entries from a (possibly tighter) separate source.
/// `jb` must hold all backward levels for the recursion context.
fn refined_inf_with_level1(
    net: &Network,
    jb: &JacobianBounds,
    li: &LayerIntervals,
    level1: &LevelBounds,
) -> Result<f64> {
    let h = net.depth();
    if jb.levels.len() != h {
        return Err(Error::InvalidArgument(
            "refined bound needs all backward levels".into(),
        ));
    }
    let n_out = net.output_dim();
    let n_in = net.input_dim();
    let weights: Vec<ArrayView2<f64>> = net.layers().iter().map(|l| l.weights.view()).collect();
    let grad_lo: Vec<ArrayView1<f64>> = li.layers.iter().map(|l| l.grad_lower.view()).collect();
    let grad_hi: Vec<ArrayView1<f64>> = li.layers.iter().map(|l| l.grad_upper.view()).collect();

    let mut best = 0.0f64;
    for j in 0..n_out {
        let l_row = level1.lower.row(j);
        let u_row = level1.upper.row(j);
        let row_m = |k: usize| l_row[k].abs().max(u_row[k].abs());
        let full_row_sum: f64 = (0..n_in).map(row_m).sum();
        let value = if h == 1 {
            full_row_sum
        } else {
            let mut uncertain_sum = 0.0;
            let mut w_hat = Array1::<f64>::zeros(net.weight(1).nrows());
            let mut any_fixed = false;
            for k in 0..n_in {
                if l_row[k] >= 0.0 {
                    w_hat += &net.weight(1).column(k);
                    any_fixed = true;
                } else if u_row[k] <= 0.0 {
                    w_hat -= &net.weight(1).column(k);
                    any_fixed = true;
                } else {
                    uncertain_sum += row_m(k);
                }
            }
            if !any_fixed {
                full_row_sum
            } else {
                let ctx = RowContext::from_levels(&weights, &grad_lo, &grad_hi, &jb.levels, j);
                let w_hat_col = w_hat.insert_axis(ndarray::Axis(1));
                let (_, upper) = ctx.compute_lu(1, w_hat_col.view());
                // both are valid upper bounds; keep the smaller
                (uncertain_sum + upper[0]).min(full_row_sum)
            }
        };
        best = best.max(value);
    }
    Ok(best)
}

/// End-to-end certified local Lipschitz constant: pre-activation bounds,
/// derivative ranges, the chosen Jacobian bound, then the induced norm
/// (refined for recurjac methods at p=∞). The naive method ignores the
/// ball.
pub fn local_lipschitz(net: &Network, ball: &Ball, method: BoundMethod) -> Result<LipschitzResult> {
    let value = match method {
        BoundMethod::Naive => naive_global_lipschitz(net, ball.p)?,
        _ => {
            let li = preact::bounded_intervals(net, ball)?;
            lipschitz_from_intervals(net, &li, ball.p, method)?
        }
    };
    Ok(LipschitzResult {
        value,
        p: ball.p,
        radius: ball.radius,
        method,
    })
}

/// Lipschitz bound from precomputed intervals (shared by the sweep and
/// certification paths).
pub fn lipschitz_from_intervals(
    net: &Network,
    li: &LayerIntervals,
    p: Norm,
    method: BoundMethod,
) -> Result<f64> {
    match method {
        BoundMethod::Naive => naive_global_lipschitz(net, p),
        BoundMethod::FastLip => {
            let jb = fastlip(net, li)?;
            lipschitz_p(&worst_case_matrix(&jb), p)
        }
        BoundMethod::RecurjacBackward => {
            let jb = recurjac_backward(net, li)?;
            if p == Norm::LInf {
                lipschitz_inf_refined(net, &jb, li)
            } else {
                lipschitz_p(&worst_case_matrix(&jb), p)
            }
        }
        BoundMethod::RecurjacForward0 | BoundMethod::RecurjacForward1 => {
            let variant = if method == BoundMethod::RecurjacForward0 {
                ForwardVariant::F0
            } else {
                ForwardVariant::F1
            };
            let jb = recurjac_forward(net, li, variant)?;
            if p == Norm::LInf {
                // The refinement recursion needs the backward level stack;
                // the sign split and M entries take the tighter of the two
                // level-1 bounds (both are sound, so the intersection is).
                let back = recurjac_backward(net, li)?;
                let level1 = intersect_levels(jb.level1(), back.level1());
                refined_inf_with_level1(net, &back, li, &level1)
            } else {
                lipschitz_p(&worst_case_matrix(&jb), p)
            }
        }
    }
}

fn intersect_levels(a: &LevelBounds, b: &LevelBounds) -> LevelBounds {
    let mut lower = a.lower.clone();
    let mut upper = a.upper.clone();
    lower.zip_mut_with(&b.lower, |x, &y| *x = x.max(y));
    upper.zip_mut_with(&b.upper, |x, &y| *x = x.min(y));
    LevelBounds { lower, upper }
}

/// Convenience wrapper used by the CLI: bounds via a specific method from
/// already-computed intervals, reusing `jacbound` dispatch.
pub fn jacobian_bounds(
    net: &Network,
    li: &LayerIntervals,
    method: BoundMethod,
) -> Result<JacobianBounds> {
    match method {
        BoundMethod::RecurjacBackward => recurjac_backward(net, li),
        BoundMethod::RecurjacForward0 => recurjac_forward(net, li, ForwardVariant::F0),
        BoundMethod::RecurjacForward1 => recurjac_forward(net, li, ForwardVariant::F1),
        BoundMethod::FastLip => jacbound::fastlip(net, li),
        BoundMethod::Naive => Err(Error::Config(
            "naive method produces no Jacobian bounds".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Activation;
    use crate::netgen;
    use crate::oracle;
    use ndarray::{arr1, arr2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn worst_case_matrix_examples() {
        let jb = JacobianBounds {
            method: BoundMethod::FastLip,
            levels: vec![LevelBounds {
                lower: arr2(&[[-1.0, 2.0]]),
                upper: arr2(&[[3.0, 2.0]]),
            }],
        };
        let m = worst_case_matrix(&jb);
        assert_eq!(m.m, arr2(&[[3.0, 2.0]]));
    }

    #[test]
    fn induced_norm_examples() {
        let m = arr2(&[[3.0, 2.0]]);
        assert_eq!(induced_norm(&m.view(), Norm::LInf).unwrap(), 5.0);
        assert_eq!(induced_norm(&m.view(), Norm::L1).unwrap(), 3.0);
        let m2 = arr2(&[[3.0, 4.0]]);
        assert!((induced_norm(&m2.view(), Norm::L2).unwrap() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn spectral_norm_of_known_matrix() {
        // singular values of [[3,0],[4,5]] are √45 and √5
        let m = arr2(&[[3.0, 0.0], [4.0, 5.0]]);
        let got = induced_norm(&m.view(), Norm::L2).unwrap();
        assert!((got - 45.0f64.sqrt()).abs() < 1e-8, "{got}");
    }

    #[test]
    fn linear_net_local_equals_exact_norm() {
        let net = netgen::random_mlp(&[4, 5, 3], Activation::LeakyRelu { alpha: 1.0 }, 2);
        let product = net.weight(2).dot(net.weight(1));
        for p in [Norm::L1, Norm::L2, Norm::LInf] {
            let ball = Ball::new(arr1(&[0.0; 4]), 0.7, p).unwrap();
            let exact = induced_norm(&product.view(), p).unwrap();
            for method in [
                BoundMethod::RecurjacBackward,
                BoundMethod::RecurjacForward0,
                BoundMethod::RecurjacForward1,
                BoundMethod::FastLip,
            ] {
                let r = local_lipschitz(&net, &ball, method).unwrap();
                assert!(
                    (r.value - exact).abs() < 1e-9,
                    "{method:?} {p:?}: {} vs {exact}",
                    r.value
                );
            }
        }
    }

    #[test]
    fn ordering_chain_on_relu_nets() {
        let mut rng = ChaCha8Rng::seed_from_u64(200);
        for seed in 40..44u64 {
            let net = netgen::random_mlp(&[5, 9, 9, 8, 2], Activation::Relu, seed);
            for p in [Norm::L1, Norm::L2, Norm::LInf] {
                let ball = Ball::new(netgen::random_input(5, seed + 1), 0.1, p).unwrap();
                let sampled =
                    oracle::sample_lipschitz_lower(&net, &ball, 150, &mut rng).unwrap();
                let rj = local_lipschitz(&net, &ball, BoundMethod::RecurjacBackward)
                    .unwrap()
                    .value;
                let fl = local_lipschitz(&net, &ball, BoundMethod::FastLip).unwrap().value;
                let nv = local_lipschitz(&net, &ball, BoundMethod::Naive).unwrap().value;
                assert!(sampled <= rj + 1e-9, "{p:?}: sampled {sampled} > recurjac {rj}");
                assert!(rj <= fl, "{p:?}: recurjac {rj} > fastlip {fl}");
                assert!(fl <= nv, "{p:?}: fastlip {fl} > naive {nv}");
            }
        }
    }

    #[test]
    fn monotone_in_radius() {
        let net = netgen::random_mlp(&[4, 8, 8, 3], Activation::Tanh, 31);
        let center = netgen::random_input(4, 32);
        let mut prev = 0.0;
        for r in [0.01, 0.05, 0.1, 0.5, 1.0, 4.0] {
            let ball = Ball::new(center.clone(), r, Norm::LInf).unwrap();
            let v = local_lipschitz(&net, &ball, BoundMethod::RecurjacBackward)
                .unwrap()
                .value;
            assert!(v + 1e-12 >= prev, "value dropped from {prev} to {v} at R={r}");
            prev = v;
        }
    }

    #[test]
    fn refined_inf_never_worse_than_m_norm() {
        for seed in 50..56u64 {
            let net = netgen::random_mlp(&[6, 10, 9, 8, 1], Activation::Relu, seed);
            let ball = Ball::new(netgen::random_input(6, seed), 0.08, Norm::LInf).unwrap();
            let li = preact::bounded_intervals(&net, &ball).unwrap();
            let jb = recurjac_backward(&net, &li).unwrap();
            let m_norm = lipschitz_p(&worst_case_matrix(&jb), Norm::LInf).unwrap();
            let refined = lipschitz_inf_refined(&net, &jb, &li).unwrap();
            assert!(refined <= m_norm + 1e-12, "refined {refined} > ‖M‖∞ {m_norm}");
        }
    }

    #[test]
    fn refined_inf_equals_m_norm_when_all_columns_unstable() {
        // huge radius ⇒ every Jacobian entry straddles zero
        let net = netgen::random_mlp(&[5, 8, 8, 1], Activation::Relu, 60);
        let ball = Ball::new(arr1(&[0.0; 5]), 100.0, Norm::LInf).unwrap();
        let li = preact::bounded_intervals(&net, &ball).unwrap();
        let jb = recurjac_backward(&net, &li).unwrap();
        let lb = jb.level1();
        assert!(lb
            .lower
            .iter()
            .zip(lb.upper.iter())
            .all(|(l, u)| *l < 0.0 && *u > 0.0));
        let m_norm = lipschitz_p(&worst_case_matrix(&jb), Norm::LInf).unwrap();
        let refined = lipschitz_inf_refined(&net, &jb, &li).unwrap();
        assert_eq!(refined, m_norm);
    }

    #[test]
    fn prop2_soundness_sampled_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let net = netgen::random_mlp(&[4, 7, 7, 2], Activation::Sigmoid, 70);
        for p in [Norm::L1, Norm::L2, Norm::LInf] {
            let ball = Ball::new(netgen::random_input(4, 71), 0.2, p).unwrap();
            let bound = local_lipschitz(&net, &ball, BoundMethod::RecurjacBackward)
                .unwrap()
                .value;
            for _ in 0..1000 {
                let x = oracle::sample_in_ball(&ball, &mut rng);
                let jac = net.jacobian_at(x.view()).unwrap();
                let norm = induced_norm(&jac.view(), p).unwrap();
                assert!(norm <= bound + 1e-9, "{p:?}: ‖∇f‖={norm} > bound {bound}");
            }
        }
    }

    #[test]
    fn plateau_after_all_unstable() {
        let net = netgen::random_mlp(&[4, 6, 6, 2], Activation::Relu, 80);
        let center = arr1(&[0.0; 4]);
        // find a radius with every neuron unstable
        let mut r_all = 1.0;
        loop {
            let li = preact::bounded_intervals(
                &net,
                &Ball::new(center.clone(), r_all, Norm::LInf).unwrap(),
            )
            .unwrap();
            let all = li
                .layers
                .iter()
                .all(|l| l.grad_lower.iter().zip(l.grad_upper.iter()).all(|(a, b)| a < b));
            if all {
                break;
            }
            r_all *= 2.0;
            assert!(r_all < 1e9);
        }
        let v1 = local_lipschitz(
            &net,
            &Ball::new(center.clone(), 2.0 * r_all, Norm::LInf).unwrap(),
            BoundMethod::RecurjacBackward,
        )
        .unwrap()
        .value;
        let v2 = local_lipschitz(
            &net,
            &Ball::new(center.clone(), 4.0 * r_all, Norm::LInf).unwrap(),
            BoundMethod::RecurjacBackward,
        )
        .unwrap()
        .value;
        assert_eq!(v1, v2);
        let naive = local_lipschitz(
            &net,
            &Ball::new(center, r_all, Norm::LInf).unwrap(),
            BoundMethod::Naive,
        )
        .unwrap()
        .value;
        assert!(v1 <= naive);
    }

    #[test]
    fn general_p_rejected() {
        assert!(Norm::parse("3").is_err());
        assert!(Norm::parse("inf").is_ok());
    }
}
