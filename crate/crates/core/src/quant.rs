//! Uniform symmetric quantizer, step calibration, noise sampling, and
//! activation fake-quantization.
//!
//! The quantized value of `w` under step `Δ` and bit width `b` is
//! `clamp(round(w / Δ), -2^(b-1), 2^(b-1) - 1) · Δ` with round half away
//! from zero, per-tensor, signed, no zero point.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::nnet::{Activation, Network};
use crate::rng::Prng;
use crate::tensor::Tensor;

/// What a scheme quantizes; calibration and fake-quant paths differ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantTarget {
    Weight,
    Activation,
}

/// Per-tensor quantizer state: bit width and step size Δ.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantScheme {
    pub bits: u8,
    pub step: f64,
    pub target: QuantTarget,
}

impl QuantScheme {
    pub fn new(bits: u8, step: f64, target: QuantTarget) -> Result<Self> {
        if !(2..=8).contains(&bits) {
            return Err(Error::Validation(format!(
                "bit width must be in [2, 8], got {bits}"
            )));
        }
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::Validation(format!(
                "step size must be positive and finite, got {step}"
            )));
        }
        Ok(Self { bits, step, target })
    }

    /// Smallest representable integer, `-2^(b-1)`.
    pub fn qmin(&self) -> i32 {
        -(1 << (self.bits - 1))
    }

    /// Largest representable integer, `2^(b-1) - 1`.
    pub fn qmax(&self) -> i32 {
        (1 << (self.bits - 1)) - 1
    }
}

/// Integer tensor plus the scheme that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    shape: Vec<usize>,
    ints: Vec<i32>,
    pub scheme: QuantScheme,
}

impl QuantizedTensor {
    pub fn new(shape: Vec<usize>, ints: Vec<i32>, scheme: QuantScheme) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != ints.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!(
                "shape {shape:?} does not match {} ints",
                ints.len()
            )));
        }
        if ints
            .iter()
            .any(|&i| i < scheme.qmin() || i > scheme.qmax())
        {
            return Err(Error::Validation(format!(
                "integer outside [{}, {}]",
                scheme.qmin(),
                scheme.qmax()
            )));
        }
        Ok(Self { shape, ints, scheme })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ints(&self) -> &[i32] {
        &self.ints
    }
}

#[inline]
fn quantize_int(value: f64, scheme: &QuantScheme) -> i32 {
    let q = math::round_half_away(value / scheme.step);
    let q = q.max(scheme.qmin() as f64).min(scheme.qmax() as f64);
    q as i32
}

/// Quantize-dequantize of a single value.
#[inline]
pub fn fake_quant_value(value: f64, scheme: &QuantScheme) -> f64 {
    quantize_int(value, scheme) as f64 * scheme.step
}

/// Round-then-clamp a tensor onto the integer grid.
pub fn quantize_uniform(w: &Tensor, scheme: &QuantScheme) -> Result<QuantizedTensor> {
    w.validate_finite("quantize_uniform input")?;
    let ints = w.data().iter().map(|&v| quantize_int(v, scheme)).collect();
    QuantizedTensor::new(w.shape().to_vec(), ints, scheme.clone())
}

/// Integers back to floats: `ints · Δ` elementwise.
pub fn dequantize(q: &QuantizedTensor) -> Tensor {
    let data = q.ints.iter().map(|&i| f64::from(i) * q.scheme.step).collect();
    Tensor::new(q.shape.clone(), data).expect("dequantized tensor is finite by construction")
}

/// A calibrated scheme plus a degeneracy flag for all-zero inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedStep {
    pub scheme: QuantScheme,
    /// Set when the input tensor was all zeros and Δ fell back to 1.0.
    pub degenerate: bool,
}

/// Grid factors shared by `calibrate_step` and its tests: 100 candidates
/// spanning `[0.5, 1.2] · max|w| / qmax`, evaluated by mean squared error
/// with ties broken toward the smallest Δ.
pub const CALIB_GRID_LO: f64 = 0.5;
pub const CALIB_GRID_HI: f64 = 1.2;
pub const CALIB_GRID_POINTS: usize = 100;

/// Pick a step size minimizing mean squared quantization error.
pub fn calibrate_step(w: &Tensor, bits: u8, target: QuantTarget) -> Result<CalibratedStep> {
    let probe = QuantScheme::new(bits, 1.0, target)?;
    let max_abs = w.data().iter().fold(0.0_f64, |acc, &v| acc.max(math::abs(v)));
    if max_abs == 0.0 {
        return Ok(CalibratedStep {
            scheme: QuantScheme::new(bits, 1.0, target)?,
            degenerate: true,
        });
    }
    let base = max_abs / probe.qmax() as f64;
    let mut best_step = 0.0;
    let mut best_mse = f64::INFINITY;
    for k in 0..CALIB_GRID_POINTS {
        // factor first, then scale by base, so Δ is exactly proportional
        // to the data scale
        let factor = CALIB_GRID_LO
            + (CALIB_GRID_HI - CALIB_GRID_LO) * k as f64 / (CALIB_GRID_POINTS - 1) as f64;
        let step = factor * base;
        let scheme = QuantScheme::new(bits, step, target)?;
        let mut mse = 0.0;
        for &v in w.data() {
            let err = v - fake_quant_value(v, &scheme);
            mse += err * err;
        }
        mse /= w.len() as f64;
        if mse < best_mse {
            best_mse = mse;
            best_step = step;
        }
    }
    Ok(CalibratedStep {
        scheme: QuantScheme::new(bits, best_step, target)?,
        degenerate: false,
    })
}

/// Activation scheme from the max absolute value of observed activations.
pub fn calibrate_act_from_max(max_abs: f64, bits: u8) -> Result<CalibratedStep> {
    if max_abs <= 0.0 {
        return Ok(CalibratedStep {
            scheme: QuantScheme::new(bits, 1.0, QuantTarget::Activation)?,
            degenerate: true,
        });
    }
    let probe = QuantScheme::new(bits, 1.0, QuantTarget::Activation)?;
    Ok(CalibratedStep {
        scheme: QuantScheme::new(bits, max_abs / probe.qmax() as f64, QuantTarget::Activation)?,
        degenerate: false,
    })
}

/// I.i.d. uniform quantization noise in `[-Δ/2, Δ/2]`.
pub fn sample_noise(scheme: &QuantScheme, shape: &[usize], rng: &mut Prng) -> Tensor {
    let n: usize = shape.iter().product();
    let half = scheme.step / 2.0;
    let data: Vec<f64> = (0..n).map(|_| rng.uniform_sym(half)).collect();
    Tensor::new(shape.to_vec(), data).expect("noise tensor is finite by construction")
}

/// Quantize-dequantize of activations; gradients use the straight-through
/// rule in the backward pass.
pub fn fake_quant_act(a: &Tensor, scheme: &QuantScheme) -> Result<Tensor> {
    if scheme.target != QuantTarget::Activation {
        return Err(Error::Validation(
            "fake_quant_act needs an activation-target scheme".into(),
        ));
    }
    a.map(|v| fake_quant_value(v, scheme))
}

/// One layer of a quantized network: integer weights, float bias, and the
/// activation-quantization scheme used at inference (if any).
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    pub weight: QuantizedTensor,
    pub bias: Tensor,
    pub activation: Activation,
    pub act_scheme: Option<QuantScheme>,
}

/// A fully quantized model: the in-memory form of a quantized checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedNet {
    pub layers: Vec<QuantizedLayer>,
}

impl QuantizedNet {
    /// Dequantized float network.
    pub fn to_network(&self) -> Result<Network> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            layers.push(crate::nnet::DenseLayer::new(
                dequantize(&l.weight),
                l.bias.clone(),
                l.activation,
            )?);
        }
        Network::new(layers)
    }

    /// Per-layer activation transforms for quantized inference.
    pub fn act_transforms(&self) -> Vec<crate::nnet::ActTransform> {
        self.layers
            .iter()
            .map(|l| match &l.act_scheme {
                Some(s) => crate::nnet::ActTransform::FakeQuant(s.clone()),
                None => crate::nnet::ActTransform::None,
            })
            .collect()
    }

    /// Accuracy with weights dequantized and activations fake-quantized
    /// per the stored schemes.
    pub fn accuracy(&self, batch: &crate::nnet::Batch) -> Result<f64> {
        let net = self.to_network()?;
        let trace = crate::nnet::forward_traced(&net, &batch.inputs, &self.act_transforms())?;
        Ok(crate::nnet::accuracy_of_logits(trace.logits(), &batch.labels))
    }
}
