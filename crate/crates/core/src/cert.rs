//! Applications of the Jacobian bounds: certified robustness radii via
//! integrated local Lipschitz bounds, and radii within which the gradient
//! provably cannot vanish.

use ndarray::{Array1, ArrayView1};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::jacbound::BoundMethod;
use crate::lipschitz;
use crate::model::{Layer, Network};
use crate::preact::{self, Ball, Norm};

/// One grid point of the Lipschitz integral.
#[derive(Debug, Clone, Serialize)]
pub struct GridPoint {
    pub t: f64,
    pub lipschitz: f64,
}

/// Certificate for one attack target.
#[derive(Debug, Clone, Serialize)]
pub struct TargetCertificate {
    pub target: usize,
    pub margin: f64,
    pub radius: f64,
    pub grid: Vec<GridPoint>,
}

/// Certified robustness radius for a labeled input: within `radius`, no
/// perturbation can flip the prediction to any certified target.
#[derive(Debug, Clone, Serialize)]
pub struct Certificate {
    pub label: usize,
    pub p: String,
    pub intervals: usize,
    pub radius: f64,
    pub targets: Vec<TargetCertificate>,
}

/// Witness that one gradient coordinate keeps a fixed sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SignTag {
    AlwaysPositive,
    AlwaysNegative,
}

/// Largest radius within which some coordinate of ∇f_j is sign-fixed,
/// hence the gradient cannot vanish.
#[derive(Debug, Clone, Serialize)]
pub struct ExclusionResult {
    pub output: usize,
    /// `f64::INFINITY` when the witness holds in the unbounded regime.
    pub radius: f64,
    pub witness: Option<(usize, SignTag)>,
}

const BINARY_SEARCH_ITERS: usize = 20;

/// Default number of integral grid intervals.
pub const DEFAULT_INTERVALS: usize = 30;

/// Network computing the margin f_c − f_j: the final layer is replaced by
/// the single row W^(H)_{c,:} − W^(H)_{j,:}.
pub fn margin_network(net: &Network, c: usize, j: usize) -> Result<Network> {
    let outputs = net.output_dim();
    if c == j || c >= outputs || j >= outputs {
        return Err(Error::InvalidClass {
            index: c.max(j),
            outputs,
        });
    }
    let mut layers: Vec<Layer> = net.layers().to_vec();
    let last = layers.last_mut().unwrap();
    let row = (&last.weights.row(c) - &last.weights.row(j)).insert_axis(ndarray::Axis(0));
    let bias = Array1::from_vec(vec![last.bias[c] - last.bias[j]]);
    *last = Layer::new(row, bias, None);
    Network::new(layers)
}

/// Single-output network keeping only row `j` of the final layer.
pub fn output_row_network(net: &Network, j: usize) -> Result<Network> {
    let outputs = net.output_dim();
    if j >= outputs {
        return Err(Error::InvalidClass { index: j, outputs });
    }
    let mut layers: Vec<Layer> = net.layers().to_vec();
    let last = layers.last_mut().unwrap();
    let row = last.weights.row(j).to_owned().insert_axis(ndarray::Axis(0));
    let bias = Array1::from_vec(vec![last.bias[j]]);
    *last = Layer::new(row, bias, None);
    Network::new(layers)
}

/// Right-endpoint Riemann upper sum of the local Lipschitz integral:
/// Σ_{i=1..n} L(i·R/n) · R/n with L from the backward recursive bound.
/// Since each L(t_i) upper-bounds the true constant on its whole segment,
/// the sum upper-bounds ∫₀ᴿ L(t) dt and hence |f(x) − f(s)| on the ball.
pub fn lipschitz_integral_bound(
    net: &Network,
    s: ArrayView1<f64>,
    radius: f64,
    n: usize,
    p: Norm,
) -> Result<f64> {
    Ok(integral_with_grid(net, s, radius, n, p)?.0)
}

fn integral_with_grid(
    net: &Network,
    s: ArrayView1<f64>,
    radius: f64,
    n: usize,
    p: Norm,
) -> Result<(f64, Vec<GridPoint>)> {
    if n < 1 {
        return Err(Error::InvalidArgument("interval count must be >= 1".into()));
    }
    if radius <= 0.0 {
        return Err(Error::InvalidArgument("radius must be positive".into()));
    }
    let dt = radius / n as f64;
    let mut total = 0.0;
    let mut grid = Vec::with_capacity(n);
    for i in 1..=n {
        let t = i as f64 * radius / n as f64;
        let ball = Ball::new(s.to_owned(), t, p)?;
        let l = lipschitz::local_lipschitz(net, &ball, BoundMethod::RecurjacBackward)?.value;
        total += l * dt;
        grid.push(GridPoint { t, lipschitz: l });
    }
    Ok((total, grid))
}

/// Certified robustness radius against the given targets.
///
/// Per target j, binary-searches the largest R ≤ `r_max` whose integral
/// bound stays below the margin g(s) = f_c(s) − f_j(s); the certificate
/// radius is the minimum over targets. The search returns the certified
/// (lower) endpoint, so under-reporting preserves soundness.
pub fn certify_radius(
    net: &Network,
    s: ArrayView1<f64>,
    c: usize,
    targets: &[usize],
    p: Norm,
    r_max: f64,
    n: usize,
) -> Result<Certificate> {
    if r_max <= 0.0 {
        return Err(Error::InvalidArgument("r_max must be positive".into()));
    }
    let predicted = net.predict(s)?;
    if predicted != c {
        return Err(Error::Misclassified {
            expected: c,
            predicted,
        });
    }
    let (outputs, _) = net.forward(s)?;
    let per_target: Vec<Result<TargetCertificate>> = targets
        .par_iter()
        .map(|&j| {
            let margin = outputs[c] - outputs[j];
            if margin < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "negative margin {margin} to target {j} despite argmax check"
                )));
            }
            let mnet = margin_network(net, c, j)?;
            if margin == 0.0 {
                return Ok(TargetCertificate {
                    target: j,
                    margin,
                    radius: 0.0,
                    grid: Vec::new(),
                });
            }
            let certified = |r: f64| -> Result<bool> {
                Ok(lipschitz_integral_bound(&mnet, s, r, n, p)? < margin)
            };
            let radius = if certified(r_max)? {
                r_max
            } else {
                let mut lo = 0.0;
                let mut hi = r_max;
                for _ in 0..BINARY_SEARCH_ITERS {
                    let mid = 0.5 * (lo + hi);
                    if certified(mid)? {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                lo
            };
            let grid = if radius > 0.0 {
                integral_with_grid(&mnet, s, radius, n, p)?.1
            } else {
                Vec::new()
            };
            Ok(TargetCertificate {
                target: j,
                margin,
                radius,
                grid,
            })
        })
        .collect();
    let targets: Vec<TargetCertificate> = per_target.into_iter().collect::<Result<_>>()?;
    let radius = targets
        .iter()
        .map(|t| t.radius)
        .fold(f64::INFINITY, f64::min);
    Ok(Certificate {
        label: c,
        p: p.label().to_string(),
        intervals: n,
        radius: if radius.is_finite() { radius } else { 0.0 },
        targets,
    })
}

/// Checks row `j` of the Jacobian bounds for a sign-fixed coordinate; the
/// witness with the largest margin from zero wins.
fn sign_fixed_witness(
    net: &Network,
    li: &preact::LayerIntervals,
) -> Result<Option<(usize, SignTag)>> {
    let jb = crate::jacbound::recurjac_backward(net, li)?;
    let lb = jb.level1();
    let mut best: Option<(usize, SignTag, f64)> = None;
    for k in 0..lb.lower.ncols() {
        let (l, u) = (lb.lower[[0, k]], lb.upper[[0, k]]);
        let candidate = if l > 0.0 {
            Some((k, SignTag::AlwaysPositive, l))
        } else if u < 0.0 {
            Some((k, SignTag::AlwaysNegative, -u))
        } else {
            None
        };
        if let Some((k, tag, margin)) = candidate {
            if best.map_or(true, |(_, _, m)| margin > m) {
                best = Some((k, tag, margin));
            }
        }
    }
    Ok(best.map(|(k, tag, _)| (k, tag)))
}

/// Largest radius (up to `r_max`) within which some coordinate of ∇f_j is
/// provably sign-fixed. Returns radius `+∞` when the witness already holds
/// with every activation derivative ranging over its whole global range.
pub fn exclusion_radius(
    net: &Network,
    s: ArrayView1<f64>,
    j: usize,
    p: Norm,
    r_max: f64,
) -> Result<ExclusionResult> {
    if r_max <= 0.0 {
        return Err(Error::InvalidArgument("r_max must be positive".into()));
    }
    let rownet = output_row_network(net, j)?;
    // unbounded regime first
    let global = preact::global_intervals(&rownet);
    if let Some(witness) = sign_fixed_witness(&rownet, &global)? {
        return Ok(ExclusionResult {
            output: j,
            radius: f64::INFINITY,
            witness: Some(witness),
        });
    }
    let check = |r: f64| -> Result<Option<(usize, SignTag)>> {
        let ball = Ball::new(s.to_owned(), r, p)?;
        let li = preact::bounded_intervals(&rownet, &ball)?;
        sign_fixed_witness(&rownet, &li)
    };
    if let Some(witness) = check(r_max)? {
        return Ok(ExclusionResult {
            output: j,
            radius: r_max,
            witness: Some(witness),
        });
    }
    let mut lo = 0.0;
    let mut lo_witness = check(0.0)?;
    if lo_witness.is_none() {
        // gradient can vanish arbitrarily close to (or at) the center
        return Ok(ExclusionResult {
            output: j,
            radius: 0.0,
            witness: None,
        });
    }
    let mut hi = r_max;
    for _ in 0..BINARY_SEARCH_ITERS {
        let mid = 0.5 * (lo + hi);
        match check(mid)? {
            Some(w) => {
                lo = mid;
                lo_witness = Some(w);
            }
            None => hi = mid,
        }
    }
    Ok(ExclusionResult {
        output: j,
        radius: lo,
        witness: lo_witness,
    })
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

    fn identity_final_net() -> Network {
        Network::new(vec![
            Layer::new(
                ndarray::Array2::eye(3),
                Array1::zeros(3),
                Some(Activation::Relu),
            ),
            Layer::new(ndarray::Array2::eye(3), Array1::zeros(3), None),
        ])
        .unwrap()
    }

    #[test]
    fn margin_network_row_difference() {
        let net = identity_final_net();
        let m = margin_network(&net, 0, 1).unwrap();
        assert_eq!(m.output_dim(), 1);
        assert_eq!(m.weight(2).row(0).to_vec(), vec![1.0, -1.0, 0.0]);
    }

    #[test]
    fn margin_forward_and_jacobian_match_difference() {
        let net = netgen::random_mlp(&[4, 6, 5], Activation::Tanh, 91);
        let m = margin_network(&net, 2, 0).unwrap();
        for seed in 0..5u64 {
            let x = netgen::random_input(4, seed);
            let (full, _) = net.forward(x.view()).unwrap();
            let (diff, _) = m.forward(x.view()).unwrap();
            assert!((diff[0] - (full[2] - full[0])).abs() < 1e-12);
            let jac = net.jacobian_at(x.view()).unwrap();
            let mjac = m.jacobian_at(x.view()).unwrap();
            for k in 0..4 {
                assert!((mjac[[0, k]] - (jac[[2, k]] - jac[[0, k]])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn margin_network_rejects_bad_classes() {
        let net = identity_final_net();
        assert!(margin_network(&net, 1, 1).is_err());
        assert!(margin_network(&net, 0, 3).is_err());
    }

    /// 1-input linear classifier with constant margin gradient 2 and
    /// margin 1 at the origin: certified radius must be 0.5.
    fn constant_lipschitz_fixture() -> Network {
        Network::new(vec![Layer::new(
            arr2(&[[1.0], [-1.0]]),
            arr1(&[0.5, -0.5]),
            None,
        )])
        .unwrap()
    }

    #[test]
    fn constant_lipschitz_radius_is_half() {
        let net = constant_lipschitz_fixture();
        let s = arr1(&[0.0]);
        for n in [1, 7, 30] {
            let cert = certify_radius(&net, s.view(), 0, &[1], Norm::LInf, 1.0, n).unwrap();
            assert!(
                (cert.radius - 0.5).abs() <= 1e-6,
                "n={n}: radius {}",
                cert.radius
            );
        }
    }

    #[test]
    fn integral_bound_analytic_cases() {
        let net = constant_lipschitz_fixture();
        let m = margin_network(&net, 0, 1).unwrap();
        let s = arr1(&[0.0]);
        // constant L = 2 ⇒ bound = 2R for any n
        for n in [1, 4, 30] {
            let b = lipschitz_integral_bound(&m, s.view(), 0.75, n, Norm::LInf).unwrap();
            assert!((b - 1.5).abs() < 1e-12, "n={n}: {b}");
        }
    }

    #[test]
    fn integral_refines_downward_and_radius_upward() {
        let net = netgen::random_mlp(&[3, 8, 8, 3], Activation::Relu, 13);
        let s = netgen::random_input(3, 14);
        let c = net.predict(s.view()).unwrap();
        let m = margin_network(&net, c, (c + 1) % 3).unwrap();
        let radius = 0.4;
        let mut prev = f64::INFINITY;
        for n in [1, 2, 4, 8, 16, 32] {
            let b = lipschitz_integral_bound(&m, s.view(), radius, n, Norm::LInf).unwrap();
            assert!(
                b <= prev + 1e-12,
                "integral bound rose from {prev} to {b} at n={n}"
            );
            prev = b;
        }
        // coarse bound L(R)·R dominates
        let coarse = lipschitz_integral_bound(&m, s.view(), radius, 1, Norm::LInf).unwrap();
        let fine = lipschitz_integral_bound(&m, s.view(), radius, 30, Norm::LInf).unwrap();
        assert!(fine <= coarse + 1e-12);

        let mut prev_radius = 0.0;
        for n in [1, 2, 4, 8, 16, 32] {
            let cert = certify_radius(&net, s.view(), c, &[(c + 1) % 3], Norm::LInf, 2.0, n)
                .unwrap();
            assert!(
                cert.radius + 1e-12 >= prev_radius,
                "certified radius shrank at n={n}"
            );
            prev_radius = cert.radius;
        }
    }

    #[test]
    fn certify_rejects_misclassified() {
        let net = identity_final_net();
        let s = arr1(&[0.0, 1.0, 0.0]);
        assert!(matches!(
            certify_radius(&net, s.view(), 0, &[1], Norm::LInf, 1.0, 5),
            Err(Error::Misclassified { .. })
        ));
    }

    #[test]
    fn certificate_survives_random_attack() {
        let net = netgen::random_mlp(&[4, 10, 10, 3], Activation::Relu, 21);
        let s = netgen::random_input(4, 22);
        let c = net.predict(s.view()).unwrap();
        let targets: Vec<usize> = (0..3).filter(|&j| j != c).collect();
        let cert =
            certify_radius(&net, s.view(), c, &targets, Norm::LInf, 1.0, DEFAULT_INTERVALS)
                .unwrap();
        assert!(cert.radius > 0.0, "fixture should certify a positive radius");
        let ball = Ball::new(s.clone(), cert.radius, Norm::LInf).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..2000 {
            let x = oracle::sample_in_ball(&ball, &mut rng);
            let (out, _) = net.forward(x.view()).unwrap();
            for &j in &targets {
                assert!(
                    out[c] - out[j] > -1e-12,
                    "prediction flipped to certified target {j} inside radius"
                );
            }
        }
    }

    #[test]
    fn exclusion_infinite_for_strictly_positive_gradient() {
        // gradient of the single output is σ′_1 + σ′_2 ∈ [0.6, 2] globally
        let net = Network::new(vec![
            Layer::new(
                arr2(&[[1.0], [1.0]]),
                Array1::zeros(2),
                Some(Activation::LeakyRelu { alpha: 0.3 }),
            ),
            Layer::new(arr2(&[[1.0, 1.0]]), arr1(&[0.0]), None),
        ])
        .unwrap();
        let res = exclusion_radius(&net, arr1(&[0.0]).view(), 0, Norm::L2, 5.0).unwrap();
        assert!(res.radius.is_infinite());
        assert_eq!(res.witness, Some((0, SignTag::AlwaysPositive)));
    }

    #[test]
    fn exclusion_finite_with_sound_witness() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut checked = 0;
        for seed in 100..120u64 {
            let net = netgen::random_mlp(&[4, 12, 12, 12, 2], Activation::Relu, seed);
            let s = netgen::random_input(4, seed + 1);
            let res = exclusion_radius(&net, s.view(), 0, Norm::LInf, 50.0).unwrap();
            if !res.radius.is_finite() || res.radius == 0.0 || res.radius >= 50.0 {
                continue;
            }
            checked += 1;
            let (k, tag) = res.witness.unwrap();
            let inner = Ball::new(s.clone(), res.radius * (1.0 - 1e-6), Norm::LInf).unwrap();
            for _ in 0..1000 {
                let x = oracle::sample_in_ball(&inner, &mut rng);
                let jac = net.jacobian_at(x.view()).unwrap();
                let v = jac[[0, k]];
                match tag {
                    SignTag::AlwaysPositive => assert!(v > 0.0, "witness {k} hit {v}"),
                    SignTag::AlwaysNegative => assert!(v < 0.0, "witness {k} hit {v}"),
                }
            }
            if checked >= 3 {
                break;
            }
        }
        assert!(checked >= 1, "no finite exclusion radius found in fixtures");
    }
}
