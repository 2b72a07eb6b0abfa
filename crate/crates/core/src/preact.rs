//! Pre-activation bounds over an ℓp-ball.
//!
//! The first layer is bounded exactly through Hölder duality; subsequent
//! layers use interval arithmetic on the (monotone) activation outputs.
//! Any provider producing sound per-layer intervals could be substituted —
//! the bound recursion only consumes [`LayerIntervals`].

use ndarray::{Array1, ArrayView1};

use crate::actbounds::{self, GradRange};
use crate::error::{Error, Result};
use crate::model::Network;

/// Norm selector for input balls and Lipschitz constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    L1,
    L2,
    LInf,
}

impl Norm {
    /// Dual exponent q with 1/p + 1/q = 1.
    pub fn dual(self) -> Norm {
        match self {
            Norm::L1 => Norm::LInf,
            Norm::L2 => Norm::L2,
            Norm::LInf => Norm::L1,
        }
    }

    /// Vector p-norm.
    pub fn vector_norm(self, v: ArrayView1<f64>) -> f64 {
        match self {
            Norm::L1 => v.iter().map(|x| x.abs()).sum(),
            Norm::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            Norm::LInf => v.iter().fold(0.0f64, |m, x| m.max(x.abs())),
        }
    }

    pub fn parse(text: &str) -> Result<Norm> {
        match text {
            "1" => Ok(Norm::L1),
            "2" => Ok(Norm::L2),
            "inf" | "Inf" | "INF" => Ok(Norm::LInf),
            other => Err(Error::UnsupportedNorm(other.to_string())),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Norm::L1 => "1",
            Norm::L2 => "2",
            Norm::LInf => "inf",
        }
    }
}

impl std::fmt::Display for Norm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Closed ℓp-ball `{x : ‖x − center‖_p ≤ radius}`.
#[derive(Debug, Clone)]
pub struct Ball {
    pub center: Array1<f64>,
    pub radius: f64,
    pub p: Norm,
}

impl Ball {
    pub fn new(center: Array1<f64>, radius: f64, p: Norm) -> Result<Self> {
        if !radius.is_finite() || radius < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "ball radius must be finite and >= 0, got {radius}"
            )));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("ball center".into()));
        }
        Ok(Ball { center, radius, p })
    }
}

/// Interval bounds for one hidden layer: pre-activation bounds plus the
/// derivative range each neuron's activation can take over them.
#[derive(Debug, Clone)]
pub struct LayerBounds {
    pub lower: Array1<f64>,
    pub upper: Array1<f64>,
    /// σ′ ranges; empty until [`grad_ranges`] fills them.
    pub grad_lower: Array1<f64>,
    pub grad_upper: Array1<f64>,
}

/// Per-layer pre-activation bounds for all hidden layers `1..H-1`.
#[derive(Debug, Clone)]
pub struct LayerIntervals {
    pub layers: Vec<LayerBounds>,
}

impl LayerIntervals {
    pub fn has_grad_ranges(&self) -> bool {
        self.layers.iter().all(|l| !l.grad_lower.is_empty())
    }
}

/// Propagates the input ball through the network, producing sound
/// pre-activation intervals for every hidden layer.
pub fn interval_propagate(net: &Network, ball: &Ball) -> Result<LayerIntervals> {
    if ball.center.len() != net.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "ball center length {} != input dim {}",
            ball.center.len(),
            net.input_dim()
        )));
    }
    let h = net.depth();
    let mut layers = Vec::with_capacity(h.saturating_sub(1));
    // Layer 1: f_r ∈ w_r·s + b_r ± R‖w_r‖_q by Hölder duality.
    if h >= 2 {
        let first = &net.layers()[0];
        let q = ball.p.dual();
        let mid = first.weights.dot(&ball.center) + &first.bias;
        let mut lower = Array1::zeros(first.output_dim());
        let mut upper = Array1::zeros(first.output_dim());
        for r in 0..first.output_dim() {
            let slack = ball.radius * q.vector_norm(first.weights.row(r));
            lower[r] = mid[r] - slack;
            upper[r] = mid[r] + slack;
        }
        layers.push(LayerBounds {
            lower,
            upper,
            grad_lower: Array1::zeros(0),
            grad_upper: Array1::zeros(0),
        });
    }
    // Subsequent layers: interval arithmetic through monotone activations.
    for l in 2..h {
        let prev = &layers[l - 2];
        let act = net.hidden_activation(l - 1);
        let out_lo = prev.lower.mapv(|v| act.apply(v));
        let out_hi = prev.upper.mapv(|v| act.apply(v));
        let layer = &net.layers()[l - 1];
        let n = layer.output_dim();
        let mut lower = Array1::zeros(n);
        let mut upper = Array1::zeros(n);
        for r in 0..n {
            let mut lo = layer.bias[r];
            let mut hi = layer.bias[r];
            for (k, &w) in layer.weights.row(r).iter().enumerate() {
                if w >= 0.0 {
                    lo += w * out_lo[k];
                    hi += w * out_hi[k];
                } else {
                    lo += w * out_hi[k];
                    hi += w * out_lo[k];
                }
            }
            lower[r] = lo;
            upper[r] = hi;
        }
        layers.push(LayerBounds {
            lower,
            upper,
            grad_lower: Array1::zeros(0),
            grad_upper: Array1::zeros(0),
        });
    }
    Ok(LayerIntervals { layers })
}

/// Fills the σ′ ranges of every hidden layer from its pre-activation bounds.
pub fn grad_ranges(net: &Network, mut li: LayerIntervals) -> Result<LayerIntervals> {
    for (idx, layer) in li.layers.iter_mut().enumerate() {
        let act = net.hidden_activation(idx + 1);
        let n = layer.lower.len();
        let mut glo = Array1::zeros(n);
        let mut ghi = Array1::zeros(n);
        for r in 0..n {
            let range = actbounds::derivative_range(act, layer.lower[r], layer.upper[r])?;
            glo[r] = range.lower;
            ghi[r] = range.upper;
        }
        layer.grad_lower = glo;
        layer.grad_upper = ghi;
    }
    Ok(li)
}

/// Intervals for the unbounded-input regime: every pre-activation is
/// unconstrained and every σ′ range is the activation's global range.
/// Useful for global Lipschitz constants and stationary-point exclusion.
pub fn global_intervals(net: &Network) -> LayerIntervals {
    let layers = (1..net.depth())
        .map(|l| {
            let act = net.hidden_activation(l);
            let n = net.layers()[l - 1].output_dim();
            let GradRange { lower, upper } = actbounds::global_range(act);
            LayerBounds {
                lower: Array1::from_elem(n, f64::NEG_INFINITY),
                upper: Array1::from_elem(n, f64::INFINITY),
                grad_lower: Array1::from_elem(n, lower),
                grad_upper: Array1::from_elem(n, upper),
            }
        })
        .collect();
    LayerIntervals { layers }
}

/// Convenience: propagate and fill derivative ranges in one call.
pub fn bounded_intervals(net: &Network, ball: &Ball) -> Result<LayerIntervals> {
    grad_ranges(net, interval_propagate(net, ball)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, Layer};
    use crate::netgen;
    use crate::oracle::sample_in_ball;
    use ndarray::{arr1, arr2};
    use rand::SeedableRng;

    #[test]
    fn first_layer_holder_linf() {
        let net = Network::new(vec![
            Layer::new(arr2(&[[1.0, -1.0]]), arr1(&[0.0]), Some(Activation::Relu)),
            Layer::new(arr2(&[[1.0]]), arr1(&[0.0]), None),
        ])
        .unwrap();
        let ball = Ball::new(arr1(&[0.0, 0.0]), 1.0, Norm::LInf).unwrap();
        let li = interval_propagate(&net, &ball).unwrap();
        assert_eq!(li.layers[0].lower[0], -2.0);
        assert_eq!(li.layers[0].upper[0], 2.0);
    }

    #[test]
    fn zero_radius_collapses_to_forward() {
        let net = netgen::random_mlp(&[3, 5, 4, 2], Activation::Tanh, 11);
        let x = arr1(&[0.2, -0.4, 0.9]);
        let ball = Ball::new(x.clone(), 0.0, Norm::L2).unwrap();
        let li = interval_propagate(&net, &ball).unwrap();
        let (_, preacts) = net.forward(x.view()).unwrap();
        for (lb, pre) in li.layers.iter().zip(&preacts) {
            for r in 0..pre.len() {
                assert!((lb.lower[r] - pre[r]).abs() < 1e-9);
                assert!((lb.upper[r] - pre[r]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sampled_containment_all_norms() {
        let net = netgen::random_mlp(&[4, 8, 8, 3], Activation::Relu, 5);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for p in [Norm::L1, Norm::L2, Norm::LInf] {
            let ball = Ball::new(arr1(&[0.1, -0.2, 0.3, 0.0]), 0.1, p).unwrap();
            let li = interval_propagate(&net, &ball).unwrap();
            for _ in 0..10_000 {
                let x = sample_in_ball(&ball, &mut rng);
                let (_, preacts) = net.forward(x.view()).unwrap();
                for (lb, pre) in li.layers.iter().zip(&preacts) {
                    for r in 0..pre.len() {
                        assert!(
                            lb.lower[r] - 1e-9 <= pre[r] && pre[r] <= lb.upper[r] + 1e-9,
                            "preact {} outside [{}, {}] under {p:?}",
                            pre[r],
                            lb.lower[r],
                            lb.upper[r]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn nesting_in_radius() {
        let net = netgen::random_mlp(&[4, 7, 6, 2], Activation::Sigmoid, 3);
        let center = arr1(&[0.0, 0.5, -0.5, 0.25]);
        let mut prev: Option<LayerIntervals> = None;
        for r in [0.0, 0.05, 0.1, 0.5, 2.0] {
            let li =
                interval_propagate(&net, &Ball::new(center.clone(), r, Norm::LInf).unwrap())
                    .unwrap();
            if let Some(inner) = &prev {
                for (small, big) in inner.layers.iter().zip(&li.layers) {
                    for i in 0..small.lower.len() {
                        assert!(big.lower[i] <= small.lower[i] + 1e-12);
                        assert!(big.upper[i] + 1e-12 >= small.upper[i]);
                    }
                }
            }
            prev = Some(li);
        }
    }

    #[test]
    fn grad_range_examples() {
        let net = Network::new(vec![
            Layer::new(arr2(&[[1.0], [1.0]]), arr1(&[0.0, 0.0]), Some(Activation::Relu)),
            Layer::new(arr2(&[[1.0, 1.0]]), arr1(&[0.0]), None),
        ])
        .unwrap();
        // hand-built intervals: neuron 0 straddles, neuron 1 strictly positive
        let li = LayerIntervals {
            layers: vec![LayerBounds {
                lower: arr1(&[-1.0, 1.0]),
                upper: arr1(&[2.0, 3.0]),
                grad_lower: Array1::zeros(0),
                grad_upper: Array1::zeros(0),
            }],
        };
        let li = grad_ranges(&net, li).unwrap();
        assert_eq!(li.layers[0].grad_lower, arr1(&[0.0, 1.0]));
        assert_eq!(li.layers[0].grad_upper, arr1(&[1.0, 1.0]));
    }
}
