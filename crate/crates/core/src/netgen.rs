//! Seeded random network generation, used by the validation oracles and the
//! test suite to produce reproducible fixtures.

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::model::{Activation, Layer, Network};

/// Random MLP with the given layer sizes (`dims[0]` inputs through
/// `dims.last()` outputs) and one activation kind on all hidden layers.
/// Weights are normal with 1/√fan_in scale, biases uniform in ±0.1;
/// identical seeds give identical networks.
pub fn random_mlp(dims: &[usize], activation: Activation, seed: u64) -> Network {
    random_mlp_scaled(dims, activation, seed, 1.0)
}

/// Like [`random_mlp`] with an extra multiplier on the weight scale.
pub fn random_mlp_scaled(
    dims: &[usize],
    activation: Activation,
    seed: u64,
    scale: f64,
) -> Network {
    assert!(dims.len() >= 2, "need at least input and output dims");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for i in 1..dims.len() {
        let (rows, cols) = (dims[i], dims[i - 1]);
        let std = scale / (cols as f64).sqrt();
        let weights = Array2::from_shape_fn((rows, cols), |_| {
            let g: f64 = rng.sample(StandardNormal);
            g * std
        });
        let bias = Array1::from_shape_fn(rows, |_| rng.random_range(-0.1..0.1));
        let act = if i == dims.len() - 1 {
            None
        } else {
            Some(activation)
        };
        layers.push(Layer::new(weights, bias, act));
    }
    Network::new(layers).expect("generated dimensions always chain")
}

/// Random input vector with entries in ±1, seeded.
pub fn random_input(dim: usize, seed: u64) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array1::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0))
}
