//! Minimal dense feedforward engine with exact reverse-mode gradients.
//!
//! Layers compute `act(A·W + b)` with `A` a `batch × input_dim` matrix and
//! `W` an `input_dim × output_dim` matrix, so a batch is one matrix product
//! per layer. All arithmetic is `f64`.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngState;

/// Probability clamp applied before any logarithm.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "sigmoid" => Some(Activation::Sigmoid),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the post-activation value.
    fn derivative(self, post: f64) -> f64 {
        match self {
            Activation::Relu => {
                if post > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => post * (1.0 - post),
            Activation::Identity => 1.0,
        }
    }
}

/// Logistic function, kept strictly inside `(0, 1)`.
pub fn sigmoid(z: f64) -> f64 {
    let v = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    v.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(input_dim: usize, output_dim: usize, activation: Activation) -> Self {
        Self {
            input_dim,
            output_dim,
            activation,
        }
    }
}

/// Builds a chain `input → hidden[0] → … → output` with ReLU hidden layers.
pub fn mlp_specs(input_dim: usize, hidden: &[usize], output: Activation) -> Vec<LayerSpec> {
    let mut specs = Vec::with_capacity(hidden.len() + 1);
    let mut prev = input_dim;
    for &h in hidden {
        specs.push(LayerSpec::new(prev, h, Activation::Relu));
        prev = h;
    }
    specs.push(LayerSpec::new(prev, 1, output));
    specs
}

fn check_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::Config("network needs at least one layer".into()));
    }
    for (i, s) in specs.iter().enumerate() {
        if s.input_dim == 0 || s.output_dim == 0 {
            return Err(Error::Config(format!("layer {i} has a zero dimension")));
        }
    }
    for (i, pair) in specs.windows(2).enumerate() {
        if pair[0].output_dim != pair[1].input_dim {
            return Err(Error::Config(format!(
                "layer {} outputs {} values but layer {} expects {}",
                i,
                pair[0].output_dim,
                i + 1,
                pair[1].input_dim
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub spec: LayerSpec,
    /// `input_dim × output_dim`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetwork {
    layers: Vec<DenseLayer>,
}

/// Per-layer activations cached by [`DenseNetwork::forward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input of every layer; `inputs[0]` is the batch itself.
    pub inputs: Vec<Array2<f64>>,
    pub pre_activations: Vec<Array2<f64>>,
    pub outputs: Vec<Array2<f64>>,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.inputs[0].nrows()
    }

    /// Smallest `|z|` over ReLU pre-activations (distance to a kink).
    pub fn min_relu_margin(&self, net: &DenseNetwork) -> f64 {
        net.layers
            .iter()
            .zip(&self.pre_activations)
            .filter(|(l, _)| l.spec.activation == Activation::Relu)
            .flat_map(|(_, z)| z.iter().map(|v| v.abs()))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Gradients shaped exactly like the owning network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerGradient>,
}

impl GradientSet {
    pub fn zeros_like(net: &DenseNetwork) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    /// Flattened in the same order as [`DenseNetwork::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weights.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.flatten().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl DenseNetwork {
    /// Glorot-uniform weights, zero biases.
    pub fn new(specs: &[LayerSpec], rng: &mut RngState) -> Result<Self> {
        check_specs(specs)?;
        let layers = specs
            .iter()
            .map(|&spec| {
                let bound = (6.0 / (spec.input_dim + spec.output_dim) as f64).sqrt();
                let weights = Array2::from_shape_fn((spec.input_dim, spec.output_dim), |_| {
                    rng.random_range(-bound..=bound)
                });
                DenseLayer {
                    spec,
                    weights,
                    bias: Array1::zeros(spec.output_dim),
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn zeros(specs: &[LayerSpec]) -> Result<Self> {
        check_specs(specs)?;
        Ok(Self {
            layers: specs
                .iter()
                .map(|&spec| DenseLayer {
                    spec,
                    weights: Array2::zeros((spec.input_dim, spec.output_dim)),
                    bias: Array1::zeros(spec.output_dim),
                })
                .collect(),
        })
    }

    /// Assembles a network from explicit layers, validating shapes.
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        let specs: Vec<LayerSpec> = layers.iter().map(|l| l.spec).collect();
        check_specs(&specs)?;
        for (i, l) in layers.iter().enumerate() {
            if l.weights.dim() != (l.spec.input_dim, l.spec.output_dim)
                || l.bias.len() != l.spec.output_dim
            {
                return Err(Error::Config(format!("layer {i} parameters do not match its spec")));
            }
        }
        let net = Self { layers };
        if !net.is_finite() {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        Ok(net)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.output_dim
    }

    pub fn output_activation(&self) -> Activation {
        self.layers[self.layers.len() - 1].spec.activation
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// All parameters, layer by layer, weights (row-major) then bias.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend(l.weights.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        out
    }

    /// Mutable access to the `index`-th parameter in [`parameters`](Self::parameters) order.
    pub fn parameter_mut(&mut self, mut index: usize) -> &mut f64 {
        for l in &mut self.layers {
            let nw = l.weights.len();
            if index < nw {
                let cols = l.weights.ncols();
                return &mut l.weights[[index / cols, index % cols]];
            }
            index -= nw;
            if index < l.bias.len() {
                return &mut l.bias[index];
            }
            index -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Order-sensitive digest of the exact parameter bits.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.parameters() {
            h ^= v.to_bits();
            h = h.wrapping_mul(0x0000_0100_0000_01b3).rotate_left(7);
        }
        h
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite()))
    }

    /// Batch forward pass, keeping every intermediate needed by [`backward`](Self::backward).
    pub fn forward(&self, inputs: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardTrace)> {
        self.check_input(inputs)?;
        let depth = self.layers.len();
        let mut trace = ForwardTrace {
            inputs: Vec::with_capacity(depth),
            pre_activations: Vec::with_capacity(depth),
            outputs: Vec::with_capacity(depth),
        };
        let mut current = inputs.to_owned();
        for layer in &self.layers {
            let z = current.dot(&layer.weights) + &layer.bias;
            let act = layer.spec.activation;
            let a = z.mapv(|v| act.apply(v));
            trace.inputs.push(current);
            trace.pre_activations.push(z);
            current = a.clone();
            trace.outputs.push(a);
        }
        Ok((current, trace))
    }

    /// Forward pass without a trace.
    pub fn predict(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(inputs)?;
        let mut current = inputs.to_owned();
        for layer in &self.layers {
            let act = layer.spec.activation;
            current = (current.dot(&layer.weights) + &layer.bias).mapv_into(|v| act.apply(v));
        }
        Ok(current)
    }

    fn check_input(&self, inputs: ArrayView2<f64>) -> Result<()> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::Usage(format!(
                "network expects {} input columns, got {}",
                self.input_dim(),
                inputs.ncols()
            )));
        }
        if !inputs.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite network input".into()));
        }
        Ok(())
    }

    /// Reverse-mode gradients of the scalar whose output gradient is `output_grads`.
    pub fn backward(&self, trace: &ForwardTrace, output_grads: ArrayView2<f64>) -> Result<GradientSet> {
        self.backprop(trace, output_grads, false).map(|(g, _)| g)
    }

    /// Like [`backward`](Self::backward) but also returns the gradient wrt the network input.
    pub fn backward_with_input(
        &self,
        trace: &ForwardTrace,
        output_grads: ArrayView2<f64>,
    ) -> Result<(GradientSet, Array2<f64>)> {
        self.backprop(trace, output_grads, true)
            .map(|(g, d)| (g, d.expect("input gradient requested")))
    }

    fn backprop(
        &self,
        trace: &ForwardTrace,
        output_grads: ArrayView2<f64>,
        want_input: bool,
    ) -> Result<(GradientSet, Option<Array2<f64>>)> {
        let depth = self.layers.len();
        if trace.outputs.len() != depth {
            return Err(Error::Usage("trace was produced by a different network".into()));
        }
        let last = &trace.outputs[depth - 1];
        if last.dim() != output_grads.dim() {
            return Err(Error::Usage(format!(
                "output gradient shape {:?} does not match forward output {:?}",
                output_grads.dim(),
                last.dim()
            )));
        }
        let mut grads = Vec::with_capacity(depth);
        let mut upstream = output_grads.to_owned();
        let mut input_grad = None;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let act = layer.spec.activation;
            let mut dz = upstream;
            Zip::from(&mut dz)
                .and(&trace.outputs[i])
                .for_each(|d, &post| *d *= act.derivative(post));
            let dw = trace.inputs[i].t().dot(&dz);
            let db = dz.sum_axis(Axis(0));
            grads.push(LayerGradient { weights: dw, bias: db });
            if i > 0 || want_input {
                let prev = dz.dot(&layer.weights.t());
                if i == 0 {
                    input_grad = Some(prev);
                    upstream = Array2::zeros((0, 0));
                } else {
                    upstream = prev;
                }
            } else {
                upstream = Array2::zeros((0, 0));
            }
        }
        grads.reverse();
        Ok((GradientSet { layers: grads }, input_grad))
    }

    /// Plain SGD: `p ← p − lr·g(p)`. Refuses non-finite gradients.
    pub fn sgd_step(&mut self, grads: &GradientSet, learning_rate: f64) -> Result<()> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::Usage(format!("invalid learning rate {learning_rate}")));
        }
        if grads.layers.len() != self.layers.len()
            || grads.layers.iter().zip(&self.layers).any(|(g, l)| {
                g.weights.dim() != l.weights.dim() || g.bias.len() != l.bias.len()
            })
        {
            return Err(Error::Usage("gradient shapes do not match the network".into()));
        }
        if !grads.is_finite() {
            return Err(Error::Numeric("non-finite gradient, update refused".into()));
        }
        if learning_rate == 0.0 {
            return Ok(());
        }
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            layer.weights.scaled_add(-learning_rate, &g.weights);
            layer.bias.scaled_add(-learning_rate, &g.bias);
        }
        if !self.is_finite() {
            return Err(Error::Numeric("update produced non-finite parameters".into()));
        }
        Ok(())
    }
}

/// Result of [`binary_cross_entropy`].
#[derive(Debug, Clone)]
pub struct BceOutput {
    pub loss: f64,
    pub per_sample: Vec<f64>,
    /// Gradient of `loss` with respect to each prediction.
    pub grads: Vec<f64>,
}

/// Log loss `−[t·ln p + (1−t)·ln(1−p)]`, averaged with optional sample weights.
///
/// Predictions are clamped to `[1e-7, 1 − 1e-7]` first; the gradient is that of
/// the loss formula evaluated at the clamped prediction, so saturated outputs
/// still receive a learning signal.
pub fn binary_cross_entropy(
    preds: &[f64],
    targets: &[u8],
    sample_weights: Option<&[f64]>,
) -> Result<BceOutput> {
    let n = preds.len();
    if targets.len() != n {
        return Err(Error::Usage(format!(
            "{n} predictions but {} targets",
            targets.len()
        )));
    }
    if n == 0 {
        return Err(Error::Usage("empty batch".into()));
    }
    if let Some(w) = sample_weights {
        if w.len() != n {
            return Err(Error::Usage(format!("{n} predictions but {} weights", w.len())));
        }
        if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Usage("sample weights must be finite and nonnegative".into()));
        }
    }
    let total_weight = match sample_weights {
        Some(w) => w.iter().sum::<f64>(),
        None => n as f64,
    };
    if total_weight <= 0.0 {
        return Err(Error::Usage("sample weights sum to zero".into()));
    }
    let mut per_sample = Vec::with_capacity(n);
    let mut grads = Vec::with_capacity(n);
    let mut loss = 0.0;
    for i in 0..n {
        let p = if preds[i].is_nan() {
            return Err(Error::Numeric("NaN prediction".into()));
        } else {
            preds[i].clamp(PROB_EPS, 1.0 - PROB_EPS)
        };
        let t = f64::from(targets[i]);
        let l = -(t * p.ln() + (1.0 - t) * (1.0 - p).ln());
        let w = sample_weights.map_or(1.0, |w| w[i]);
        loss += w * l;
        per_sample.push(l);
        grads.push(w / total_weight * (p - t) / (p * (1.0 - p)));
    }
    Ok(BceOutput {
        loss: loss / total_weight,
        per_sample,
        grads,
    })
}
