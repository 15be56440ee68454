//! Dense feed-forward substrate with exact analytic gradients.
//!
//! Everything above this module is expressed as compositions of affine
//! layers, the two loss primitives, and reverse-mode backprop over a taped
//! forward pass. All arithmetic is 64-bit; the finite-difference gate is not
//! attainable in single precision.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Element-wise activation applied after each affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative at pre-activation `z`, given the already-computed output
    /// `a = apply(z)`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Tanh => 1.0 - a * a,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Activation> {
        match s {
            "identity" => Some(Activation::Identity),
            "relu" => Some(Activation::Relu),
            "sigmoid" => Some(Activation::Sigmoid),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Shape and activation of one dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(input_dim: usize, output_dim: usize, activation: Activation) -> LayerSpec {
        assert!(input_dim >= 1 && output_dim >= 1, "layer dims must be >= 1");
        LayerSpec {
            input_dim,
            output_dim,
            activation,
        }
    }
}

/// One dense layer: row-major `output_dim x input_dim` weights plus biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub spec: LayerSpec,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn weight(&self, out: usize, inp: usize) -> f64 {
        self.weights[out * self.spec.input_dim + inp]
    }
}

/// An ordered stack of layers forming one network. Layer shapes chain:
/// each layer's input dim equals the previous layer's output dim.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterSet {
    pub layers: Vec<Layer>,
}

impl ParameterSet {
    /// Build a fresh network with uniform Glorot weights in
    /// `[-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))]` and zero
    /// biases.
    pub fn init<R: Rng>(specs: &[(&str, LayerSpec)], rng: &mut R) -> ParameterSet {
        let mut layers = Vec::with_capacity(specs.len());
        for (i, (name, spec)) in specs.iter().enumerate() {
            if i > 0 {
                assert_eq!(
                    specs[i - 1].1.output_dim,
                    spec.input_dim,
                    "layer shapes must chain"
                );
            }
            let bound = (6.0 / (spec.input_dim + spec.output_dim) as f64).sqrt();
            let weights = (0..spec.input_dim * spec.output_dim)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            layers.push(Layer {
                name: name.to_string(),
                spec: *spec,
                weights,
                biases: vec![0.0; spec.output_dim],
            });
        }
        ParameterSet { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.spec.input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.spec.output_dim)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// Set every weight and bias to zero (handy for degenerate-head tests).
    pub fn zero(&mut self) {
        for layer in &mut self.layers {
            layer.weights.iter_mut().for_each(|w| *w = 0.0);
            layer.biases.iter_mut().for_each(|b| *b = 0.0);
        }
    }
}

/// Per-layer gradient storage, shape-identical to a [`ParameterSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerGradient>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl GradientSet {
    pub fn zeros_like(params: &ParameterSet) -> GradientSet {
        GradientSet {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    /// Entry-wise accumulation. Operands must be shape-identical.
    pub fn add_assign(&mut self, other: &GradientSet) {
        assert_eq!(self.layers.len(), other.layers.len());
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            for (d, s) in dst.weights.iter_mut().zip(&src.weights) {
                *d += s;
            }
            for (d, s) in dst.biases.iter_mut().zip(&src.biases) {
                *d += s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for layer in &mut self.layers {
            layer.weights.iter_mut().for_each(|w| *w *= factor);
            layer.biases.iter_mut().for_each(|b| *b *= factor);
        }
    }

    fn matches(&self, params: &ParameterSet) -> bool {
        self.layers.len() == params.layers.len()
            && self
                .layers
                .iter()
                .zip(&params.layers)
                .all(|(g, p)| g.weights.len() == p.weights.len() && g.biases.len() == p.biases.len())
    }
}

/// `dst - scale * grad`, entry-wise, leaving both inputs untouched. This is
/// the single update primitive behind pretraining, the meta updates, and the
/// inference-time fine-tune.
pub fn axpy_params(dst: &ParameterSet, scale: f64, grad: &GradientSet) -> Result<ParameterSet> {
    if !grad.matches(dst) {
        return Err(Error::shape("axpy operands differ in layout"));
    }
    if scale == 0.0 {
        return Ok(dst.clone());
    }
    let mut out = dst.clone();
    for (layer, g) in out.layers.iter_mut().zip(&grad.layers) {
        for (w, gw) in layer.weights.iter_mut().zip(&g.weights) {
            *w -= scale * gw;
        }
        for (b, gb) in layer.biases.iter_mut().zip(&g.biases) {
            *b -= scale * gb;
        }
    }
    Ok(out)
}

/// Recorded intermediates from one [`forward`] call: the input fed to each
/// layer, plus pre- and post-activation values. Enough for an exact backward
/// pass.
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.post.last().map_or(&[], |v| v.as_slice())
    }
}

/// Affine-then-activation composition over the whole stack.
pub fn forward(params: &ParameterSet, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
    if input.len() != params.input_dim() {
        return Err(Error::shape(format!(
            "input has {} values, network expects {}",
            input.len(),
            params.input_dim()
        )));
    }
    let mut tape = Tape {
        inputs: Vec::with_capacity(params.layers.len()),
        pre: Vec::with_capacity(params.layers.len()),
        post: Vec::with_capacity(params.layers.len()),
    };
    let mut current = input.to_vec();
    for layer in &params.layers {
        let spec = layer.spec;
        let mut pre = Vec::with_capacity(spec.output_dim);
        for o in 0..spec.output_dim {
            let row = &layer.weights[o * spec.input_dim..(o + 1) * spec.input_dim];
            let z: f64 = row.iter().zip(&current).map(|(w, x)| w * x).sum::<f64>() + layer.biases[o];
            pre.push(z);
        }
        let post: Vec<f64> = pre.iter().map(|&z| spec.activation.apply(z)).collect();
        tape.inputs.push(current);
        tape.pre.push(pre);
        tape.post.push(post.clone());
        current = post;
    }
    Ok((current, tape))
}

/// Exact reverse-mode derivatives of `<upstream, output>` with respect to
/// every parameter and to the network input.
pub fn backward(
    params: &ParameterSet,
    tape: &Tape,
    upstream: &[f64],
) -> Result<(GradientSet, Vec<f64>)> {
    if tape.post.len() != params.layers.len() {
        return Err(Error::shape("tape does not match network depth"));
    }
    if upstream.len() != params.output_dim() {
        return Err(Error::shape(format!(
            "upstream has {} values, network emits {}",
            upstream.len(),
            params.output_dim()
        )));
    }
    let mut grad = GradientSet::zeros_like(params);
    let mut delta_out = upstream.to_vec();
    for (idx, layer) in params.layers.iter().enumerate().rev() {
        let spec = layer.spec;
        let pre = &tape.pre[idx];
        let post = &tape.post[idx];
        let input = &tape.inputs[idx];
        // delta = upstream ⊙ activation'(z)
        let delta: Vec<f64> = (0..spec.output_dim)
            .map(|o| delta_out[o] * spec.activation.derivative(pre[o], post[o]))
            .collect();
        let g = &mut grad.layers[idx];
        for (o, &d) in delta.iter().enumerate() {
            g.biases[o] = d;
            let row = &mut g.weights[o * spec.input_dim..(o + 1) * spec.input_dim];
            for (slot, x) in row.iter_mut().zip(input) {
                *slot = d * x;
            }
        }
        let mut delta_in = vec![0.0; spec.input_dim];
        for (i, slot) in delta_in.iter_mut().enumerate() {
            *slot = (0..spec.output_dim).map(|o| delta[o] * layer.weight(o, i)).sum();
        }
        delta_out = delta_in;
    }
    Ok((grad, delta_out))
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax cross-entropy of a logit vector against the true class index,
/// computed with max subtraction. Total on finite input.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    debug_assert!(label < logits.len());
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    log_sum - (logits[label] - max)
}

/// Gradient of [`cross_entropy`] with respect to the logits:
/// `softmax(logits) - onehot(label)`.
pub fn cross_entropy_grad(logits: &[f64], label: usize) -> Vec<f64> {
    let mut g = softmax(logits);
    g[label] -= 1.0;
    g
}

/// Mean squared error between two equal-length sequences.
pub fn mse(prediction: &[f64], target: &[f64]) -> Result<f64> {
    if prediction.len() != target.len() {
        return Err(Error::shape(format!(
            "mse over {} vs {} values",
            prediction.len(),
            target.len()
        )));
    }
    let n = prediction.len() as f64;
    Ok(prediction
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}

/// Gradient of [`mse`] with respect to the prediction: `2 (p - t) / n`.
pub fn mse_grad(prediction: &[f64], target: &[f64]) -> Vec<f64> {
    let n = prediction.len() as f64;
    prediction
        .iter()
        .zip(target)
        .map(|(p, t)| 2.0 * (p - t) / n)
        .collect()
}

/// Compare an analytic gradient against central finite differences.
///
/// `loss_and_grad` must return the scalar loss and its gradient with respect
/// to `params`; every parameter is perturbed by `±step` in turn and the
/// worst relative error over parameters with non-negligible analytic
/// gradient is returned. A network with no parameters yields 0.
pub fn fd_check<F>(params: &ParameterSet, loss_and_grad: F, step: f64) -> f64
where
    F: Fn(&ParameterSet) -> (f64, GradientSet),
{
    assert!(step > 0.0, "fd step must be positive");
    let (_, analytic) = loss_and_grad(params);
    let mut worst: f64 = 0.0;
    let mut probe = |layer: usize, which: Slot, index: usize, reference: f64| {
        let mut plus = params.clone();
        slot_mut(&mut plus, layer, which, index, |v| *v += step);
        let (loss_plus, _) = loss_and_grad(&plus);
        let mut minus = params.clone();
        slot_mut(&mut minus, layer, which, index, |v| *v -= step);
        let (loss_minus, _) = loss_and_grad(&minus);
        let fd = (loss_plus - loss_minus) / (2.0 * step);
        if reference.abs() > 1e-12 {
            worst = worst.max((fd - reference).abs() / reference.abs());
        }
    };
    for (li, g) in analytic.layers.iter().enumerate() {
        for (wi, &gw) in g.weights.iter().enumerate() {
            probe(li, Slot::Weight, wi, gw);
        }
        for (bi, &gb) in g.biases.iter().enumerate() {
            probe(li, Slot::Bias, bi, gb);
        }
    }
    worst
}

#[derive(Clone, Copy)]
enum Slot {
    Weight,
    Bias,
}

fn slot_mut(params: &mut ParameterSet, layer: usize, which: Slot, index: usize, f: impl FnOnce(&mut f64)) {
    match which {
        Slot::Weight => f(&mut params.layers[layer].weights[index]),
        Slot::Bias => f(&mut params.layers[layer].biases[index]),
    }
}
