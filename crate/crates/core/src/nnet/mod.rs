//! Fully-connected networks, losses, and batches.
//!
//! Weights are row-major `[out, in]`; a network is an ordered list of
//! dense layers whose dimensions chain, with an identity final layer
//! producing logits. The loss everywhere is mean softmax cross-entropy,
//! stabilized with log-sum-exp.

mod grad;
mod optim;

pub use grad::{backward, finite_diff_grad, finite_diff_grad_with, grad, loss_and_grad, Gradients};
pub use optim::{adam_step, lr_schedule, OptimState};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::quant::{self, QuantScheme};
use crate::tensor::Tensor;

/// Per-neuron nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Identity => x,
        }
    }

    /// Derivative at pre-activation `x`; the relu subgradient at 0 is 0.
    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// One dense layer: `y = activation(W x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weight: Tensor,
    bias: Tensor,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if weight.shape().len() != 2 {
            return Err(Error::Shape(format!(
                "layer weight must be 2-D, got {:?}",
                weight.shape()
            )));
        }
        if bias.shape().len() != 1 || bias.shape()[0] != weight.shape()[0] {
            return Err(Error::Shape(format!(
                "bias shape {:?} does not match weight rows {}",
                bias.shape(),
                weight.shape()[0]
            )));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }
}

/// An ordered stack of dense layers; the model θ.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<DenseLayer>,
}

impl Network {
    /// Builds a network, checking that adjacent dimensions chain and that
    /// the final layer emits raw logits.
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("network needs at least one layer".into()));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[1].in_dim() != pair[0].out_dim() {
                return Err(Error::Shape(format!(
                    "layer {} out dim {} does not feed layer {} in dim {}",
                    k,
                    pair[0].out_dim(),
                    k + 1,
                    pair[1].in_dim()
                )));
            }
        }
        if layers.last().unwrap().activation != Activation::Identity {
            return Err(Error::Shape(
                "final layer must have identity activation (logits)".into(),
            ));
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    /// True when both networks have identical layer shapes and activations.
    pub fn same_architecture(&self, other: &Network) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weight.shape() == b.weight.shape() && a.activation == b.activation
            })
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// All parameters flattened layer by layer (weight row-major, then bias).
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(layer.weight.data());
            out.extend_from_slice(layer.bias.data());
        }
        out
    }

    /// Overwrites all parameters from a flat vector in `flat_params` order.
    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        if !params.iter().all(|v| v.is_finite()) {
            return Err(Error::Validation(
                "non-finite parameter in set_flat_params".into(),
            ));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            let w = layer.weight.len();
            layer
                .weight
                .data_mut()
                .copy_from_slice(&params[offset..offset + w]);
            offset += w;
            let b = layer.bias.len();
            layer
                .bias
                .data_mut()
                .copy_from_slice(&params[offset..offset + b]);
            offset += b;
        }
        Ok(())
    }

    /// Randomly initialized network with the given layer sizes, relu hidden
    /// activations, and He-uniform weights.
    pub fn init_he(dims: &[usize], rng: &mut crate::rng::Prng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Shape(
                "need at least input and output dimensions".into(),
            ));
        }
        let mut layers = Vec::new();
        for k in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[k], dims[k + 1]);
            let limit = math::sqrt(6.0 / fan_in as f64);
            let data: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.uniform_sym(limit))
                .collect();
            let weight = Tensor::matrix(fan_out, fan_in, data)?;
            let bias = Tensor::zeros(vec![fan_out])?;
            let activation = if k + 2 == dims.len() {
                Activation::Identity
            } else {
                Activation::Relu
            };
            layers.push(DenseLayer::new(weight, bias, activation)?);
        }
        Network::new(layers)
    }
}

/// A labelled mini-batch of 2-D inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Batch {
    pub fn new(inputs: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.shape().len() != 2 {
            return Err(Error::Shape(format!(
                "batch inputs must be [n, d], got {:?}",
                inputs.shape()
            )));
        }
        let n = inputs.shape()[0];
        if n < 1 || labels.len() != n {
            return Err(Error::Shape(format!(
                "batch has {n} rows but {} labels",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Index(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Per-hidden-layer transform applied to activations during a forward pass.
#[derive(Debug, Clone)]
pub enum ActTransform {
    /// Activations pass through untouched.
    None,
    /// Quantize-dequantize with straight-through gradients.
    FakeQuant(QuantScheme),
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    inputs: Tensor,
    /// Pre-activation `z = Wx + b` per layer.
    pre: Vec<Tensor>,
    /// Post-activation values per layer, before any fake quantization.
    post_act: Vec<Tensor>,
    /// Layer outputs actually fed forward (after optional fake quant).
    out: Vec<Tensor>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &Tensor {
        self.out.last().unwrap()
    }

    /// Post-activation values per layer, before any fake quantization.
    pub fn post_activations(&self) -> &[Tensor] {
        &self.post_act
    }
}

/// Plain forward pass to logits.
pub fn forward(net: &Network, inputs: &Tensor) -> Result<Tensor> {
    let acts = vec![ActTransform::None; net.num_layers()];
    let mut trace = forward_traced(net, inputs, &acts)?;
    Ok(trace.out.pop().unwrap())
}

/// Forward pass recording per-layer values, with optional activation
/// fake-quantization. `acts` has one entry per layer; the final layer's
/// must be [`ActTransform::None`] so logits stay unquantized.
pub fn forward_traced(
    net: &Network,
    inputs: &Tensor,
    acts: &[ActTransform],
) -> Result<ForwardTrace> {
    if inputs.shape().len() != 2 || inputs.shape()[1] != net.in_dim() {
        return Err(Error::Shape(format!(
            "inputs shape {:?} does not match network input dim {}",
            inputs.shape(),
            net.in_dim()
        )));
    }
    if acts.len() != net.num_layers() {
        return Err(Error::Shape(format!(
            "expected {} activation transforms, got {}",
            net.num_layers(),
            acts.len()
        )));
    }
    if matches!(acts.last().unwrap(), ActTransform::FakeQuant(_)) {
        return Err(Error::Validation(
            "logits must not be fake-quantized".into(),
        ));
    }

    let n = inputs.shape()[0];
    let mut pre = Vec::with_capacity(net.num_layers());
    let mut post_act = Vec::with_capacity(net.num_layers());
    let mut out: Vec<Tensor> = Vec::with_capacity(net.num_layers());

    let mut current = inputs.clone();
    for (layer, act_op) in net.layers.iter().zip(acts) {
        let (out_dim, in_dim) = (layer.out_dim(), layer.in_dim());
        let w = layer.weight.data();
        let b = layer.bias.data();
        let x = current.data();

        let mut z = vec![0.0; n * out_dim];
        for row in 0..n {
            let xr = &x[row * in_dim..(row + 1) * in_dim];
            let zr = &mut z[row * out_dim..(row + 1) * out_dim];
            for (o, zo) in zr.iter_mut().enumerate() {
                let wrow = &w[o * in_dim..(o + 1) * in_dim];
                let mut acc = b[o];
                for (wi, xi) in wrow.iter().zip(xr) {
                    acc += wi * xi;
                }
                *zo = acc;
            }
        }
        let z = Tensor::matrix(n, out_dim, z)?;
        z.validate_finite("forward pre-activation")?;

        let a = z.map(|v| layer.activation.apply(v))?;
        let o = match act_op {
            ActTransform::None => a.clone(),
            ActTransform::FakeQuant(scheme) => quant::fake_quant_act(&a, scheme)?,
        };

        pre.push(z);
        post_act.push(a);
        current = o.clone();
        out.push(o);
    }

    Ok(ForwardTrace {
        inputs: inputs.clone(),
        pre,
        post_act,
        out,
    })
}

/// Mean softmax cross-entropy over a batch, log-sum-exp stabilized.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    if logits.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "logits must be [n, classes], got {:?}",
            logits.shape()
        )));
    }
    let (n, classes) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{n} logit rows but {} labels",
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (row, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::Index(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        total += row_nll(logits, row, label);
    }
    Ok(total / n as f64)
}

/// Negative log-likelihood of one row.
fn row_nll(logits: &Tensor, row: usize, label: usize) -> f64 {
    let classes = logits.shape()[1];
    let data = &logits.data()[row * classes..(row + 1) * classes];
    let max = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = data.iter().map(|&v| math::exp(v - max)).sum();
    let lse = max + math::ln(sum);
    lse - data[label]
}

/// Row-wise softmax probabilities.
pub(crate) fn softmax_rows(logits: &Tensor) -> Tensor {
    let (n, classes) = (logits.shape()[0], logits.shape()[1]);
    let mut out = vec![0.0; n * classes];
    for row in 0..n {
        let data = &logits.data()[row * classes..(row + 1) * classes];
        let max = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (j, &v) in data.iter().enumerate() {
            let e = math::exp(v - max);
            out[row * classes + j] = e;
            sum += e;
        }
        for j in 0..classes {
            out[row * classes + j] /= sum;
        }
    }
    Tensor::matrix(n, classes, out).expect("softmax preserves shape")
}

/// Fraction of batch rows whose argmax logit equals the label.
pub fn accuracy(net: &Network, batch: &Batch) -> Result<f64> {
    let logits = forward(net, &batch.inputs)?;
    Ok(accuracy_of_logits(&logits, &batch.labels))
}

pub(crate) fn accuracy_of_logits(logits: &Tensor, labels: &[usize]) -> f64 {
    let classes = logits.shape()[1];
    let mut hits = 0usize;
    for (row, &label) in labels.iter().enumerate() {
        let data = &logits.data()[row * classes..(row + 1) * classes];
        let mut best = 0;
        for (j, &v) in data.iter().enumerate() {
            if v > data[best] {
                best = j;
            }
        }
        if best == label {
            hits += 1;
        }
    }
    hits as f64 / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_layer(w: Vec<f64>, rows: usize, cols: usize, b: Vec<f64>, act: Activation) -> Network {
        let weight = Tensor::matrix(rows, cols, w).unwrap();
        let bias = Tensor::vector(&b).unwrap();
        Network::new(vec![DenseLayer::new(weight, bias, act).unwrap()]).unwrap()
    }

    #[test]
    fn forward_identity_net_passes_input_through() {
        let net = single_layer(
            vec![1.0, 0.0, 0.0, 1.0],
            2,
            2,
            vec![0.0, 0.0],
            Activation::Identity,
        );
        let x = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let y = forward(&net, &x).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    #[test]
    fn forward_hand_matrix_multiply() {
        let net = single_layer(
            vec![2.0, 0.0, 0.0, 3.0],
            2,
            2,
            vec![1.0, -1.0],
            Activation::Identity,
        );
        let x = Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap();
        let y = forward(&net, &x).unwrap();
        assert_eq!(y.data(), &[3.0, 2.0]);
    }

    #[test]
    fn forward_relu_clamps_negative() {
        // Relu hidden layer feeding an identity readout.
        let hidden = DenseLayer::new(
            Tensor::matrix(1, 1, vec![1.0]).unwrap(),
            Tensor::vector(&[-5.0]).unwrap(),
            Activation::Relu,
        )
        .unwrap();
        let readout = DenseLayer::new(
            Tensor::matrix(1, 1, vec![1.0]).unwrap(),
            Tensor::vector(&[0.0]).unwrap(),
            Activation::Identity,
        )
        .unwrap();
        let net = Network::new(vec![hidden, readout]).unwrap();
        let x = Tensor::matrix(1, 1, vec![2.0]).unwrap();
        let y = forward(&net, &x).unwrap();
        assert_eq!(y.data(), &[0.0]);
    }

    #[test]
    fn forward_rejects_shape_mismatch() {
        let net = single_layer(vec![1.0], 1, 1, vec![0.0], Activation::Identity);
        let x = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        assert!(matches!(forward(&net, &x), Err(Error::Shape(_))));
    }

    #[test]
    fn network_rejects_unchained_layers() {
        let a = DenseLayer::new(
            Tensor::matrix(2, 2, vec![0.0; 4]).unwrap(),
            Tensor::vector(&[0.0, 0.0]).unwrap(),
            Activation::Relu,
        )
        .unwrap();
        let b = DenseLayer::new(
            Tensor::matrix(2, 3, vec![0.0; 6]).unwrap(),
            Tensor::vector(&[0.0, 0.0]).unwrap(),
            Activation::Identity,
        )
        .unwrap();
        assert!(matches!(Network::new(vec![a, b]), Err(Error::Shape(_))));
    }

    #[test]
    fn network_requires_identity_logits() {
        let layer = DenseLayer::new(
            Tensor::matrix(1, 1, vec![1.0]).unwrap(),
            Tensor::vector(&[0.0]).unwrap(),
            Activation::Relu,
        )
        .unwrap();
        assert!(Network::new(vec![layer]).is_err());
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln2() {
        let logits = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        let loss = cross_entropy(&logits, &[0]).unwrap();
        assert!((loss - core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_saturated_logits_no_overflow() {
        let logits = Tensor::matrix(1, 2, vec![1000.0, 0.0]).unwrap();
        let loss = cross_entropy(&logits, &[0]).unwrap();
        assert!(loss.is_finite());
        assert!(loss >= 0.0);
        assert!(loss < 1e-9);
    }

    #[test]
    fn cross_entropy_matches_direct_softmax_oracle() {
        // Independent brute-force evaluation without the LSE shift.
        let logits = Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let loss = cross_entropy(&logits, &[2]).unwrap();
        let z: f64 = [1.0_f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        let expected = -(3.0_f64.exp() / z).ln();
        assert!((loss - expected).abs() < 1e-12, "{loss} vs {expected}");
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let logits = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            cross_entropy(&logits, &[2]),
            Err(Error::Index(_))
        ));
    }

    #[test]
    fn batch_validates_labels() {
        let x = Tensor::matrix(2, 2, vec![0.0; 4]).unwrap();
        assert!(Batch::new(x.clone(), vec![0, 1], 2).is_ok());
        assert!(matches!(
            Batch::new(x, vec![0, 2], 2),
            Err(Error::Index(_))
        ));
    }

    #[test]
    fn accuracy_counts_argmax_hits() {
        let net = single_layer(
            vec![1.0, 0.0, 0.0, 1.0],
            2,
            2,
            vec![0.0, 0.0],
            Activation::Identity,
        );
        let x = Tensor::matrix(2, 2, vec![3.0, 1.0, 0.0, 2.0]).unwrap();
        let batch = Batch::new(x, vec![0, 0], 2).unwrap();
        assert_eq!(accuracy(&net, &batch).unwrap(), 0.5);
    }
}
