//! Post-training quantization by layer-wise reconstruction.
//!
//! The flagship method trains the float weights of an adapted model under
//! additive uniform quantization noise (which regularizes the Hessian in
//! expectation), penalizes the squared l2 distance to the shared source
//! weights (which bounds the distance between independently quantized
//! targets through the triangle inequality), and fake-quantizes
//! activations with a QDrop-style random drop. For a final stretch of
//! iterations the noise is replaced by deterministic fake quantization
//! with straight-through gradients, closing the gap between the simulated
//! and the actual quantizer before weights are hard-quantized.
//!
//! Two simplified baselines share the machinery: `ReconOnly` runs
//! fake-quantized reconstruction throughout with no noise, no drop, and no
//! distance penalty; `ReconDrop` adds only the activation drop.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::nnet::{self, ActTransform, Batch, Network, OptimState};
use crate::quant::{
    self, CalibratedStep, QuantScheme, QuantTarget, QuantizedLayer, QuantizedNet,
};
use crate::rng::Prng;

/// Reconstruction flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PtqMethod {
    /// Noise phase + fake-quant tail, distance penalty, activation drop.
    Hdrq,
    /// Fake-quant reconstruction only: no noise, no drop, no penalty.
    ReconOnly,
    /// Fake-quant reconstruction with activation drop, no noise/penalty.
    ReconDrop,
}

/// Norm used by the source-distance penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceNorm {
    /// λ·‖w - w_src‖²; smooth gradients, the default.
    Squared,
    /// λ·‖w - w_src‖.
    Plain,
}

/// Reconstruction hyperparameters.
///
/// `iterations`, `fake_quant_tail`, and `warmup` are full-scale values;
/// `scale` shrinks them proportionally for desk runs (0.05 yields
/// 1000 iterations with a 175-iteration tail from the 20000/3500 defaults).
#[derive(Debug, Clone, PartialEq)]
pub struct PtqConfig {
    pub weight_bits: u8,
    /// Activation bit width; values above 8 leave activations in full
    /// precision.
    pub act_bits: u8,
    pub iterations: usize,
    pub fake_quant_tail: usize,
    pub scale: f64,
    pub lambda_dist: f64,
    pub lr0: f64,
    pub warmup: usize,
    pub drop_prob: f64,
    pub calib_batches: usize,
    pub seed: u64,
    pub method: PtqMethod,
    pub distance_norm: DistanceNorm,
}

impl Default for PtqConfig {
    fn default() -> Self {
        Self {
            weight_bits: 4,
            act_bits: 8,
            iterations: 20_000,
            fake_quant_tail: 3_500,
            scale: 0.05,
            lambda_dist: 5e-2,
            lr0: 1e-3,
            warmup: 1_000,
            drop_prob: 0.5,
            calib_batches: 4,
            seed: 0,
            method: PtqMethod::Hdrq,
            distance_norm: DistanceNorm::Squared,
        }
    }
}

/// Weight-step recalibration period, in iterations.
const RECALIBRATE_EVERY: usize = 500;

impl PtqConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=8).contains(&self.weight_bits) {
            return Err(Error::Validation(format!(
                "weight bits must be in [2, 8], got {}",
                self.weight_bits
            )));
        }
        if (2..=8).contains(&self.act_bits) || self.act_bits > 8 {
            // ok: quantized or full precision
        } else {
            return Err(Error::Validation(format!(
                "activation bits must be in [2, 8] or > 8 for full precision, got {}",
                self.act_bits
            )));
        }
        if self.fake_quant_tail == 0 || self.fake_quant_tail >= self.iterations {
            return Err(Error::Validation(format!(
                "fake-quant tail {} must satisfy 0 < tail < iterations ({})",
                self.fake_quant_tail, self.iterations
            )));
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(Error::Validation(format!(
                "drop probability {} outside [0, 1]",
                self.drop_prob
            )));
        }
        if self.lambda_dist < 0.0 {
            return Err(Error::Validation("lambda must be >= 0".into()));
        }
        if !(self.scale > 0.0) {
            return Err(Error::Validation("scale must be > 0".into()));
        }
        if self.calib_batches == 0 {
            return Err(Error::Validation("need at least one calibration batch".into()));
        }
        Ok(())
    }

    pub fn effective_iterations(&self) -> usize {
        ((self.iterations as f64 * self.scale) as usize).max(2)
    }

    pub fn effective_tail(&self) -> usize {
        let iters = self.effective_iterations();
        ((self.fake_quant_tail as f64 * self.scale) as usize)
            .max(1)
            .min(iters - 1)
    }

    pub fn effective_warmup(&self) -> usize {
        let iters = self.effective_iterations();
        ((self.warmup as f64 * self.scale) as usize).min(iters - 1)
    }

    fn acts_quantized(&self) -> bool {
        (2..=8).contains(&self.act_bits)
    }

    /// Baselines run with the penalty off regardless of `lambda_dist`.
    fn effective_lambda(&self) -> f64 {
        match self.method {
            PtqMethod::Hdrq => self.lambda_dist,
            PtqMethod::ReconOnly | PtqMethod::ReconDrop => 0.0,
        }
    }

    fn uses_noise_phase(&self) -> bool {
        self.method == PtqMethod::Hdrq
    }

    fn uses_drop(&self) -> bool {
        matches!(self.method, PtqMethod::Hdrq | PtqMethod::ReconDrop)
    }
}

/// Outcome of one reconstruction run.
#[derive(Debug, Clone, PartialEq)]
pub struct PtqResult {
    pub quantized: QuantizedNet,
    /// Objective value (task loss + distance penalty) per iteration.
    pub loss_trace: Vec<f64>,
    /// Learning rate used at each iteration.
    pub lr_trace: Vec<f64>,
    /// Iteration index where the fake-quant tail began.
    pub tail_start: usize,
    /// l2 distance between final float weights and the source weights.
    pub distance_to_source: f64,
    /// Mean calibration loss of the hard-quantized model, deterministic
    /// activation quantization, no drop.
    pub final_loss: f64,
}

/// Squared l2 distance between all parameters of two same-shaped networks.
pub fn distance_penalty(net: &Network, source: &Network) -> Result<f64> {
    if !net.same_architecture(source) {
        return Err(Error::Shape(
            "distance penalty needs identical architectures".into(),
        ));
    }
    let a = net.flat_params();
    let b = source.flat_params();
    Ok(a.iter().zip(&b).map(|(&x, &y)| (x - y) * (x - y)).sum())
}

/// Calibrate per-layer weight schemes from the current weights.
fn calibrate_weight_schemes(net: &Network, bits: u8) -> Result<Vec<QuantScheme>> {
    net.layers()
        .iter()
        .map(|l| Ok(quant::calibrate_step(l.weight(), bits, QuantTarget::Weight)?.scheme))
        .collect()
}

/// Activation schemes from max absolute activations over calibration
/// batches (hidden layers only; logits stay unquantized).
fn calibrate_act_schemes(
    net: &Network,
    calib: &[Batch],
    bits: u8,
) -> Result<Vec<Option<QuantScheme>>> {
    let mut max_abs = vec![0.0_f64; net.num_layers()];
    let passthrough = vec![ActTransform::None; net.num_layers()];
    for batch in calib.iter().take(4) {
        let trace = nnet::forward_traced(net, &batch.inputs, &passthrough)?;
        for (k, t) in trace.post_activations().iter().enumerate() {
            for &v in t.data() {
                max_abs[k] = max_abs[k].max(math::abs(v));
            }
        }
    }
    let mut schemes = Vec::with_capacity(net.num_layers());
    for (k, &m) in max_abs.iter().enumerate() {
        if k + 1 == net.num_layers() {
            schemes.push(None);
        } else {
            let CalibratedStep { scheme, .. } = quant::calibrate_act_from_max(m, bits)?;
            schemes.push(Some(scheme));
        }
    }
    Ok(schemes)
}

/// Add uniform noise from each layer's scheme to the weights (biases are
/// left untouched).
fn perturb_weights(net: &Network, schemes: &[QuantScheme], rng: &mut Prng) -> Result<Network> {
    let mut layers = Vec::with_capacity(net.num_layers());
    for (layer, scheme) in net.layers().iter().zip(schemes) {
        let noise = quant::sample_noise(scheme, layer.weight().shape(), rng);
        let weight = layer.weight().zip_with(&noise, |w, e| w + e)?;
        layers.push(nnet::DenseLayer::new(
            weight,
            layer.bias().clone(),
            layer.activation(),
        )?);
    }
    Network::new(layers)
}

/// Fake-quantize weights; the mask marks entries inside the clamp range
/// (straight-through pass) per layer.
fn fake_quant_weights(
    net: &Network,
    schemes: &[QuantScheme],
) -> Result<(Network, Vec<Vec<bool>>)> {
    let mut layers = Vec::with_capacity(net.num_layers());
    let mut masks = Vec::with_capacity(net.num_layers());
    for (layer, scheme) in net.layers().iter().zip(schemes) {
        let lo = scheme.qmin() as f64 * scheme.step;
        let hi = scheme.qmax() as f64 * scheme.step;
        let mask: Vec<bool> = layer
            .weight()
            .data()
            .iter()
            .map(|&w| (lo..=hi).contains(&w))
            .collect();
        let weight = layer.weight().map(|w| quant::fake_quant_value(w, scheme))?;
        layers.push(nnet::DenseLayer::new(
            weight,
            layer.bias().clone(),
            layer.activation(),
        )?);
        masks.push(mask);
    }
    Ok((Network::new(layers)?, masks))
}

/// Hard-quantize float weights into a checkpointable model.
fn hard_quantize(
    net: &Network,
    schemes: &[QuantScheme],
    act_schemes: &[Option<QuantScheme>],
) -> Result<QuantizedNet> {
    let mut layers = Vec::with_capacity(net.num_layers());
    for ((layer, scheme), act) in net.layers().iter().zip(schemes).zip(act_schemes) {
        layers.push(QuantizedLayer {
            weight: quant::quantize_uniform(layer.weight(), scheme)?,
            bias: layer.bias().clone(),
            activation: layer.activation(),
            act_scheme: act.clone(),
        });
    }
    Ok(QuantizedNet { layers })
}

/// Mean cross-entropy of a quantized model over calibration batches with
/// deterministic activation quantization.
pub fn quantized_calib_loss(qnet: &QuantizedNet, calib: &[Batch]) -> Result<f64> {
    let net = qnet.to_network()?;
    let acts = qnet.act_transforms();
    let mut total = 0.0;
    for batch in calib {
        let trace = nnet::forward_traced(&net, &batch.inputs, &acts)?;
        total += nnet::cross_entropy(trace.logits(), &batch.labels)?;
    }
    Ok(total / calib.len() as f64)
}

/// Layer-wise reconstruction of `net` against calibration data.
///
/// `net` is the adapted float model being quantized; `source` anchors the
/// distance penalty. Weight steps are recalibrated every 500 iterations;
/// the final weights are hard-quantized under the last calibration.
pub fn reconstruct(
    net: &Network,
    source: &Network,
    calib: &[Batch],
    cfg: &PtqConfig,
) -> Result<PtqResult> {
    cfg.validate()?;
    if !net.same_architecture(source) {
        return Err(Error::Shape(
            "reconstruction needs net and source with identical architectures".into(),
        ));
    }
    if calib.is_empty() {
        return Err(Error::Validation("empty calibration stream".into()));
    }
    for batch in calib {
        if batch.inputs.shape()[1] != net.in_dim() {
            return Err(Error::Shape(
                "calibration batch width does not match the network".into(),
            ));
        }
    }

    let iterations = cfg.effective_iterations();
    let tail_start = iterations - cfg.effective_tail();
    let warmup = cfg.effective_warmup();
    let lambda = cfg.effective_lambda();

    let act_schemes: Vec<Option<QuantScheme>> = if cfg.acts_quantized() {
        calibrate_act_schemes(net, calib, cfg.act_bits)?
    } else {
        vec![None; net.num_layers()]
    };

    let mut rng_noise = Prng::derived(cfg.seed, "hdrq/noise");
    let mut rng_drop = Prng::derived(cfg.seed, "hdrq/drop");

    let mut work = net.clone();
    let source_flat = source.flat_params();
    let mut optim = OptimState::new(net.param_count());
    let mut schemes = calibrate_weight_schemes(&work, cfg.weight_bits)?;
    let mut loss_trace = Vec::with_capacity(iterations);
    let mut lr_trace = Vec::with_capacity(iterations);

    for t in 0..iterations {
        if t > 0 && t % RECALIBRATE_EVERY == 0 {
            schemes = calibrate_weight_schemes(&work, cfg.weight_bits)?;
        }
        let batch = &calib[t % calib.len()];
        let noise_phase = cfg.uses_noise_phase() && t < tail_start;

        let (perturbed, weight_masks) = if noise_phase {
            (perturb_weights(&work, &schemes, &mut rng_noise)?, None)
        } else {
            let (fq, masks) = fake_quant_weights(&work, &schemes)?;
            (fq, Some(masks))
        };

        let acts: Vec<ActTransform> = act_schemes
            .iter()
            .map(|s| match s {
                Some(scheme) => {
                    let quantize_now = if cfg.uses_drop() {
                        rng_drop.uniform_01() < 1.0 - cfg.drop_prob
                    } else {
                        true
                    };
                    if quantize_now {
                        ActTransform::FakeQuant(scheme.clone())
                    } else {
                        ActTransform::None
                    }
                }
                None => ActTransform::None,
            })
            .collect();

        let trace = nnet::forward_traced(&perturbed, &batch.inputs, &acts)?;
        let (task_loss, grads) = nnet::backward(&perturbed, &trace, &batch.labels, &acts)?;

        let mut flat_grads = grads.flat();
        if let Some(masks) = &weight_masks {
            apply_weight_masks(net, &mut flat_grads, masks);
        }

        let mut params = work.flat_params();
        let objective = task_loss
            + add_distance_gradient(
                &mut flat_grads,
                &params,
                &source_flat,
                lambda,
                cfg.distance_norm,
            );

        let lr = nnet::lr_schedule(t, iterations, warmup, cfg.lr0)?;
        nnet::adam_step(&mut params, &flat_grads, &mut optim, lr)?;
        work.set_flat_params(&params)?;

        loss_trace.push(objective);
        lr_trace.push(lr);
    }

    let quantized = hard_quantize(&work, &schemes, &act_schemes)?;
    let distance_to_source = math::sqrt(distance_penalty(&work, source)?);
    let final_loss = quantized_calib_loss(&quantized, calib)?;
    Ok(PtqResult {
        quantized,
        loss_trace,
        lr_trace,
        tail_start,
        distance_to_source,
        final_loss,
    })
}

/// Zero the gradient of clamped weights (straight-through rule); bias
/// gradients always pass.
fn apply_weight_masks(net: &Network, flat_grads: &mut [f64], masks: &[Vec<bool>]) {
    let mut offset = 0;
    for (layer, mask) in net.layers().iter().zip(masks) {
        for (g, &pass) in flat_grads[offset..offset + layer.weight().len()]
            .iter_mut()
            .zip(mask)
        {
            if !pass {
                *g = 0.0;
            }
        }
        offset += layer.weight().len() + layer.bias().len();
    }
}

/// Adds the distance-penalty gradient in place and returns the penalty
/// value.
fn add_distance_gradient(
    flat_grads: &mut [f64],
    params: &[f64],
    source: &[f64],
    lambda: f64,
    norm: DistanceNorm,
) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let sq: f64 = params
        .iter()
        .zip(source)
        .map(|(&w, &s)| (w - s) * (w - s))
        .sum();
    match norm {
        DistanceNorm::Squared => {
            for ((g, &w), &s) in flat_grads.iter_mut().zip(params).zip(source) {
                *g += 2.0 * lambda * (w - s);
            }
            lambda * sq
        }
        DistanceNorm::Plain => {
            let dist = math::sqrt(sq);
            if dist > 0.0 {
                for ((g, &w), &s) in flat_grads.iter_mut().zip(params).zip(source) {
                    *g += lambda * (w - s) / dist;
                }
            }
            lambda * dist
        }
    }
}

/// Monte-Carlo estimate of `E[L(w+ε)] - L(w)` with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseGap {
    pub gap: f64,
    pub stderr: f64,
}

/// Estimates the expected loss increase under per-layer uniform weight
/// noise on the cross-entropy loss of `batch`.
pub fn noise_loss_gap(
    net: &Network,
    schemes: &[QuantScheme],
    batch: &Batch,
    n_samples: usize,
    rng: &mut Prng,
) -> Result<NoiseGap> {
    noise_loss_gap_with(net, schemes, n_samples, rng, |probe| {
        let logits = nnet::forward(probe, &batch.inputs)?;
        nnet::cross_entropy(&logits, &batch.labels)
    })
}

/// Closure-driven variant of [`noise_loss_gap`].
pub fn noise_loss_gap_with(
    net: &Network,
    schemes: &[QuantScheme],
    n_samples: usize,
    rng: &mut Prng,
    mut eval: impl FnMut(&Network) -> Result<f64>,
) -> Result<NoiseGap> {
    if n_samples < 100 {
        return Err(Error::Range(format!(
            "need at least 100 samples, got {n_samples}"
        )));
    }
    if schemes.len() != net.num_layers() {
        return Err(Error::Shape(format!(
            "{} schemes for {} layers",
            schemes.len(),
            net.num_layers()
        )));
    }
    let base = eval(net)?;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_samples {
        let perturbed = perturb_weights(net, schemes, rng)?;
        let delta = eval(&perturbed)? - base;
        sum += delta;
        sum_sq += delta * delta;
    }
    let n = n_samples as f64;
    let gap = sum / n;
    let var = ((sum_sq / n - gap * gap) * n / (n - 1.0)).max(0.0);
    Ok(NoiseGap {
        gap,
        stderr: math::sqrt(var / n),
    })
}
