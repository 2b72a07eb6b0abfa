//! Network representation, JSON serialization, exact forward/Jacobian
//! evaluation and max-pool expansion.
//!
//! A [`Network`] is an ordered list of dense affine layers. Every hidden
//! layer carries an element-wise activation with bounded non-negative
//! derivative; the final layer is purely affine. Convolutions and batch
//! norm are expected to be pre-flattened into this dense form by the
//! caller.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};

/// Element-wise activation function of a hidden layer.
///
/// All supported kinds are continuous, non-decreasing and have a derivative
/// in `[0, derivative_sup()]` wherever it exists. At the kink of the
/// piecewise-linear kinds the right derivative is used, so point
/// evaluations are deterministic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu { alpha: f64 },
    Sigmoid,
    Tanh,
    Arctan,
    Elu { alpha: f64 },
}

impl Activation {
    /// σ(x)
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu { alpha } => {
                if x >= 0.0 {
                    x
                } else {
                    alpha * x
                }
            }
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Arctan => x.atan(),
            Activation::Elu { alpha } => {
                if x >= 0.0 {
                    x
                } else {
                    alpha * (x.exp() - 1.0)
                }
            }
        }
    }

    /// Upper bound on σ′ over the whole domain (the constant `C`).
    pub fn derivative_sup(self) -> f64 {
        match self {
            Activation::Sigmoid => 0.25,
            _ => 1.0,
        }
    }

    pub fn is_piecewise_linear(self) -> bool {
        matches!(self, Activation::Relu | Activation::LeakyRelu { .. })
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu { .. } => "leaky_relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Arctan => "arctan",
            Activation::Elu { .. } => "elu",
        }
    }

    fn validate(self) -> Result<()> {
        match self {
            Activation::LeakyRelu { alpha } | Activation::Elu { alpha } => {
                if !(0.0..=1.0).contains(&alpha) || !alpha.is_finite() {
                    return Err(Error::InvalidActivation(format!(
                        "{} requires 0 <= alpha <= 1, got {alpha}",
                        self.name()
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One dense layer: `x -> activation(weights · x + bias)`.
///
/// `activation` is `None` only for the final layer of a network.
#[derive(Debug, Clone)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Option<Activation>,
}

impl Layer {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>, activation: Option<Activation>) -> Self {
        Layer {
            weights,
            bias,
            activation,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    fn validate(&self, index: usize) -> Result<()> {
        if self.bias.len() != self.weights.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "layer {index}: bias length {} != weight rows {}",
                self.bias.len(),
                self.weights.nrows()
            )));
        }
        if self.weights.iter().any(|w| !w.is_finite()) || self.bias.iter().any(|b| !b.is_finite())
        {
            return Err(Error::NonFinite(format!("layer {index}")));
        }
        if let Some(act) = self.activation {
            act.validate()?;
        }
        Ok(())
    }
}

/// A feed-forward network of `H = depth()` affine layers with element-wise
/// hidden activations. Immutable after construction; all evaluation
/// methods are pure.
#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Layer>,
}

impl Network {
    /// Validates layer shapes and activation placement.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::DimensionMismatch("network has no layers".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            layer.validate(i)?;
            if i + 1 < layers.len() && layer.activation.is_none() {
                return Err(Error::InvalidActivation(format!(
                    "hidden layer {i} must have an activation"
                )));
            }
            if i + 1 == layers.len() && layer.activation.is_some() {
                return Err(Error::InvalidActivation(
                    "final layer must not have an activation".into(),
                ));
            }
        }
        for i in 1..layers.len() {
            if layers[i].input_dim() != layers[i - 1].output_dim() {
                return Err(Error::DimensionMismatch(format!(
                    "layer {i} expects {} inputs but layer {} produces {}",
                    layers[i].input_dim(),
                    i - 1,
                    layers[i - 1].output_dim()
                )));
            }
        }
        Ok(Network { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Number of affine layers H.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().output_dim()
    }

    /// Weight matrix of layer `l` (1-based, as in the factorization).
    pub fn weight(&self, l: usize) -> &Array2<f64> {
        &self.layers[l - 1].weights
    }

    /// Activation of hidden layer `l` (1-based, `l < H`).
    pub fn hidden_activation(&self, l: usize) -> Activation {
        self.layers[l - 1]
            .activation
            .expect("hidden layer has an activation")
    }

    /// Evaluates the network, returning the output and the pre-activation
    /// vectors of each hidden layer.
    pub fn forward(&self, x: ArrayView1<f64>) -> Result<(Array1<f64>, Vec<Array1<f64>>)> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "input length {} != network input dim {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut preacts = Vec::with_capacity(self.depth().saturating_sub(1));
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.weights.dot(&h) + &layer.bias;
            match layer.activation {
                Some(act) => {
                    preacts.push(z.clone());
                    h = z.mapv(|v| act.apply(v));
                }
                None => {
                    debug_assert_eq!(i + 1, self.depth());
                    h = z;
                }
            }
        }
        Ok((h, preacts))
    }

    /// Exact Jacobian ∂f/∂x at `x`, using the right derivative at
    /// piecewise-linear kinks.
    pub fn jacobian_at(&self, x: ArrayView1<f64>) -> Result<Array2<f64>> {
        let (_, preacts) = self.forward(x)?;
        let h = self.depth();
        let mut jac = self.layers[h - 1].weights.clone();
        for l in (1..h).rev() {
            let act = self.hidden_activation(l);
            let d = preacts[l - 1].mapv(|v| crate::actbounds::derivative_at(act, v));
            // jac <- jac · diag(d) · W^(l)
            let scaled = &jac * &d; // broadcasts d over rows
            jac = scaled.dot(&self.layers[l - 1].weights);
        }
        Ok(jac)
    }

    /// Predicted class (argmax of the outputs; first index on ties).
    pub fn predict(&self, x: ArrayView1<f64>) -> Result<usize> {
        let (out, _) = self.forward(x)?;
        let mut best = 0;
        for (i, v) in out.iter().enumerate() {
            if *v > out[best] {
                best = i;
            }
        }
        Ok(best)
    }
}

/// Max-pool groups attached after one hidden layer.
///
/// `groups` partition a subset of the layer's output indices; each group is
/// replaced by its maximum when the pool is expanded.
#[derive(Debug, Clone)]
pub struct MaxPoolSpec {
    pub after_layer: usize,
    pub groups: Vec<Vec<usize>>,
}

// ---------------------------------------------------------------------------
// JSON model format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    layers: Vec<LayerFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    maxpools: Option<Vec<MaxPoolFile>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    activation: Option<ActivationFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ActivationFile {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaxPoolFile {
    after_layer: usize,
    groups: Vec<Vec<usize>>,
}

fn activation_from_file(f: &ActivationFile) -> Result<Activation> {
    let act = match f.kind.as_str() {
        "relu" => {
            if f.alpha.is_some() {
                return Err(Error::InvalidActivation("relu takes no alpha".into()));
            }
            Activation::Relu
        }
        "leaky_relu" => Activation::LeakyRelu {
            alpha: f.alpha.ok_or_else(|| {
                Error::InvalidActivation("leaky_relu requires alpha".into())
            })?,
        },
        "sigmoid" | "tanh" | "arctan" => {
            if f.alpha.is_some() {
                return Err(Error::InvalidActivation(format!(
                    "{} takes no alpha",
                    f.kind
                )));
            }
            match f.kind.as_str() {
                "sigmoid" => Activation::Sigmoid,
                "tanh" => Activation::Tanh,
                _ => Activation::Arctan,
            }
        }
        "elu" => Activation::Elu {
            alpha: f.alpha.unwrap_or(1.0),
        },
        other => return Err(Error::UnknownActivation(other.to_string())),
    };
    act.validate()?;
    Ok(act)
}

fn activation_to_file(act: Activation) -> ActivationFile {
    let alpha = match act {
        Activation::LeakyRelu { alpha } | Activation::Elu { alpha } => Some(alpha),
        _ => None,
    };
    ActivationFile {
        kind: act.name().to_string(),
        alpha,
    }
}

fn layer_from_file(f: LayerFile, index: usize) -> Result<Layer> {
    let rows = f.weights.len();
    if rows == 0 {
        return Err(Error::DimensionMismatch(format!(
            "layer {index}: empty weight matrix"
        )));
    }
    let cols = f.weights[0].len();
    if cols == 0 || f.weights.iter().any(|r| r.len() != cols) {
        return Err(Error::DimensionMismatch(format!(
            "layer {index}: ragged or empty weight rows"
        )));
    }
    let flat: Vec<f64> = f.weights.into_iter().flatten().collect();
    let weights = Array2::from_shape_vec((rows, cols), flat)
        .map_err(|e| Error::DimensionMismatch(format!("layer {index}: {e}")))?;
    let bias = Array1::from_vec(f.bias);
    let activation = f.activation.as_ref().map(activation_from_file).transpose()?;
    Ok(Layer::new(weights, bias, activation))
}

/// Parses a network from the JSON model format. Files with a `maxpools`
/// section are expanded into plain affine+ReLU layers on load.
pub fn network_from_json(text: &str) -> Result<Network> {
    let file: ModelFile = serde_json::from_str(text)?;
    let layers: Vec<Layer> = file
        .layers
        .into_iter()
        .enumerate()
        .map(|(i, lf)| layer_from_file(lf, i))
        .collect::<Result<_>>()?;
    match file.maxpools {
        None => Network::new(layers),
        Some(pools) => {
            let specs: Vec<MaxPoolSpec> = pools
                .into_iter()
                .map(|p| MaxPoolSpec {
                    after_layer: p.after_layer,
                    groups: p.groups,
                })
                .collect();
            expand_maxpool(&layers, &specs)
        }
    }
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    let text = std::fs::read_to_string(path)?;
    network_from_json(&text)
}

/// Serializes a (plain) network back to the JSON model format.
pub fn network_to_json(net: &Network) -> String {
    let file = ModelFile {
        layers: net
            .layers()
            .iter()
            .map(|l| LayerFile {
                weights: l
                    .weights
                    .rows()
                    .into_iter()
                    .map(|r| r.to_vec())
                    .collect(),
                bias: l.bias.to_vec(),
                activation: l.activation.map(activation_to_file),
            })
            .collect(),
        maxpools: None,
    };
    serde_json::to_string_pretty(&file).expect("model serialization cannot fail")
}

pub fn save_network(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, network_to_json(net))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Max-pool expansion
// ---------------------------------------------------------------------------

/// Rewrites max-pools into auxiliary ReLU layers.
///
/// `layers` is the raw layer list of a pooled model: layer `l+1` must have
/// one input column per *pooled* output of layer `l`, ordered like the
/// original neurons with each group collapsed onto its smallest index.
/// The returned plain network computes identical outputs, realizing each
/// pairwise max as `max(a,b) = σ(a−b) + σ(b) − σ(−b)` and tree-reducing
/// groups, which inserts O(log group size) ReLU layers per pooled layer.
pub fn expand_maxpool(layers: &[Layer], pools: &[MaxPoolSpec]) -> Result<Network> {
    let mut work: Vec<Layer> = layers.to_vec();
    let mut sorted: Vec<&MaxPoolSpec> = pools.iter().collect();
    sorted.sort_by_key(|p| p.after_layer);
    // Expand back-to-front so earlier indices stay valid while layers are
    // inserted.
    for pool in sorted.into_iter().rev() {
        expand_one(&mut work, pool)?;
    }
    Network::new(work)
}

/// One value tracked through the reduction: either an untouched neuron or
/// the current survivor of a pool group. Each wire is a linear combination
/// (one row of `combo`) of the most recently emitted layer's outputs.
#[derive(Clone, Copy)]
enum Wire {
    /// Original neuron index (used for output ordering).
    Plain(usize),
    /// Member/survivor of pool group `gi`; ordered by the group's smallest index.
    Group(usize),
}

fn expand_one(layers: &mut Vec<Layer>, pool: &MaxPoolSpec) -> Result<()> {
    let l = pool.after_layer;
    if l == 0 || l >= layers.len() {
        return Err(Error::InvalidPool(format!(
            "after_layer {l} must name a hidden layer (1..{})",
            layers.len() - 1
        )));
    }
    let width = layers[l - 1].output_dim();
    let mut groups: Vec<Vec<usize>> = pool.groups.clone();
    let mut seen = vec![false; width];
    for g in &mut groups {
        if g.len() < 2 {
            return Err(Error::InvalidPool("groups must have size >= 2".into()));
        }
        g.sort_unstable();
        for &i in g.iter() {
            if i >= width {
                return Err(Error::InvalidPool(format!(
                    "index {i} out of range for layer of width {width}"
                )));
            }
            if seen[i] {
                return Err(Error::InvalidPool(format!("index {i} used twice")));
            }
            seen[i] = true;
        }
    }

    let mut wires: Vec<Wire> = Vec::new();
    let mut combo_rows: Vec<Array1<f64>> = Vec::new();
    let mut survivors: Vec<Vec<usize>> = vec![Vec::new(); groups.len()];
    for i in 0..width {
        if !seen[i] {
            wires.push(Wire::Plain(i));
            combo_rows.push(unit_row(width, i));
        }
    }
    for (gi, g) in groups.iter().enumerate() {
        for &i in g {
            survivors[gi].push(wires.len());
            wires.push(Wire::Group(gi));
            combo_rows.push(unit_row(width, i));
        }
    }

    let mut aux_layers: Vec<Layer> = Vec::new();
    while survivors.iter().any(|s| s.len() > 1) {
        let prev_cols = combo_rows[0].len();
        // Relu units of this round, each a row over the previous outputs,
        // and the linear combination turning them back into wire values.
        let mut units: Vec<Array1<f64>> = Vec::new();
        let mut next_wires: Vec<Wire> = Vec::new();
        let mut next_terms: Vec<Vec<(usize, f64)>> = Vec::new();

        // x = relu(x) - relu(-x) carries an arbitrary-sign value through.
        let passthrough = |row: &Array1<f64>,
                               wire: Wire,
                               units: &mut Vec<Array1<f64>>,
                               next_wires: &mut Vec<Wire>,
                               next_terms: &mut Vec<Vec<(usize, f64)>>| {
            let p = units.len();
            units.push(row.clone());
            units.push(row.mapv(|v| -v));
            next_wires.push(wire);
            next_terms.push(vec![(p, 1.0), (p + 1, -1.0)]);
        };

        for (wi, w) in wires.iter().enumerate() {
            if matches!(w, Wire::Plain(_)) {
                passthrough(&combo_rows[wi], *w, &mut units, &mut next_wires, &mut next_terms);
            }
        }
        for (gi, surv) in survivors.iter().enumerate() {
            let mut chunks = surv.chunks_exact(2);
            for pair in &mut chunks {
                // max(a, b) = relu(a - b) + relu(b) - relu(-b)
                let ra = &combo_rows[pair[0]];
                let rb = &combo_rows[pair[1]];
                let p = units.len();
                units.push(ra - rb);
                units.push(rb.clone());
                units.push(rb.mapv(|v| -v));
                next_wires.push(Wire::Group(gi));
                next_terms.push(vec![(p, 1.0), (p + 1, 1.0), (p + 2, -1.0)]);
            }
            if let [last] = chunks.remainder() {
                passthrough(
                    &combo_rows[*last],
                    Wire::Group(gi),
                    &mut units,
                    &mut next_wires,
                    &mut next_terms,
                );
            }
        }

        let n_units = units.len();
        let mut a = Array2::<f64>::zeros((n_units, prev_cols));
        for (i, u) in units.iter().enumerate() {
            a.row_mut(i).assign(u);
        }
        aux_layers.push(Layer::new(a, Array1::zeros(n_units), Some(Activation::Relu)));

        let mut next_survivors: Vec<Vec<usize>> = vec![Vec::new(); groups.len()];
        combo_rows = next_terms
            .iter()
            .map(|terms| {
                let mut row = Array1::<f64>::zeros(n_units);
                for &(u, c) in terms {
                    row[u] = c;
                }
                row
            })
            .collect();
        for (i, w) in next_wires.iter().enumerate() {
            if let Wire::Group(gi) = w {
                next_survivors[*gi].push(i);
            }
        }
        wires = next_wires;
        survivors = next_survivors;
    }

    // Pooled outputs keep the original neuron order, with each group sitting
    // at its smallest member index.
    let mut order: Vec<usize> = (0..wires.len()).collect();
    order.sort_by_key(|&i| match wires[i] {
        Wire::Plain(orig) => orig,
        Wire::Group(gi) => groups[gi][0],
    });
    let pooled_dim = order.len();
    let cols = combo_rows[0].len();
    let mut selection = Array2::<f64>::zeros((pooled_dim, cols));
    for (slot, &wi) in order.iter().enumerate() {
        selection.row_mut(slot).assign(&combo_rows[wi]);
    }

    let next = &layers[l];
    if next.input_dim() != pooled_dim {
        return Err(Error::DimensionMismatch(format!(
            "layer {l} expects {} inputs but pooled layer {} produces {pooled_dim}",
            next.input_dim(),
            l - 1,
        )));
    }
    let folded = Layer::new(
        next.weights.dot(&selection),
        next.bias.clone(),
        next.activation,
    );
    layers.splice(l..=l, aux_layers.into_iter().chain(std::iter::once(folded)));
    Ok(())
}

fn unit_row(len: usize, index: usize) -> Array1<f64> {
    let mut row = Array1::zeros(len);
    row[index] = 1.0;
    row
}
