//! Merging strategies for quantized checkpoints.
//!
//! The integer-domain merge `I = round(Σ IᵢΔᵢ / Σ Δᵢ)` lands exactly
//! between two integers whenever the step sizes are similar and the
//! integer sum is odd; noise-sampled merging adds sub-step uniform noise
//! to each operand before merging and picks the candidate whose parameter
//! vector sits most symmetrically between the targets by cosine score.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::nnet::Network;
use crate::quant::{QuantScheme, QuantizedLayer, QuantizedNet, QuantizedTensor};
use crate::rng::Prng;
use crate::tensor::Tensor;

/// How a merged model was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeStrategy {
    FpMidpoint,
    IntNaive,
    NoiseSampled,
}

impl MergeStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            MergeStrategy::FpMidpoint => "fp_midpoint",
            MergeStrategy::IntNaive => "int_naive",
            MergeStrategy::NoiseSampled => "noise_sampled",
        }
    }
}

/// Direction convention of the cosine selection score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CosineMode {
    /// Average the view from every target; no target is privileged.
    Symmetric,
    /// Only the first target's view.
    OneSided,
}

/// One merged model plus its selection score.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeCandidate {
    /// Dequantized merged weights.
    pub net: Network,
    /// Integer form under the merged schemes.
    pub quantized: QuantizedNet,
    /// Cosine selection score in [-1, 1].
    pub score: f64,
    /// Candidate index within the merge call; 0 is the injected
    /// deterministic (noise-free) candidate.
    pub seed: u64,
}

/// Accuracy of a merged model on one evaluation domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainMetric {
    pub domain: String,
    pub accuracy: f64,
}

/// Outcome of a merge: the chosen candidate, the full score pool, and
/// (once attached) per-domain accuracies with their harmonic mean.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeReport {
    pub strategy: MergeStrategy,
    pub chosen: MergeCandidate,
    pub all_scores: Vec<f64>,
    pub per_domain_metric: Vec<DomainMetric>,
    pub harmonic_mean: Option<f64>,
}

impl MergeReport {
    /// Attach per-domain accuracies and compute their harmonic mean.
    pub fn attach_metrics(&mut self, metrics: Vec<DomainMetric>) -> Result<()> {
        let values: Vec<f64> = metrics.iter().map(|m| m.accuracy).collect();
        self.harmonic_mean = Some(harmonic_mean(&values)?);
        self.per_domain_metric = metrics;
        Ok(())
    }
}

/// Elementwise `(a + b) / 2` over all parameters.
pub fn merge_fp_midpoint(a: &Network, b: &Network) -> Result<Network> {
    if !a.same_architecture(b) {
        return Err(Error::Shape("midpoint merge needs identical architectures".into()));
    }
    let pa = a.flat_params();
    let pb = b.flat_params();
    let mid: Vec<f64> = pa.iter().zip(&pb).map(|(&x, &y)| 0.5 * (x + y)).collect();
    let mut out = a.clone();
    out.set_flat_params(&mid)?;
    Ok(out)
}

/// n / Σ(1/vᵢ) over strictly positive values.
pub fn harmonic_mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Domain("harmonic mean of an empty set".into()));
    }
    let mut denom = 0.0;
    for &v in values {
        if !(v > 0.0) {
            return Err(Error::Domain(format!(
                "harmonic mean needs positive values, got {v}"
            )));
        }
        denom += 1.0 / v;
    }
    Ok(values.len() as f64 / denom)
}

fn check_mergeable(checkpoints: &[&QuantizedNet]) -> Result<()> {
    if checkpoints.len() < 2 {
        return Err(Error::Validation("merging needs at least two models".into()));
    }
    let first = checkpoints[0];
    for other in &checkpoints[1..] {
        if other.layers.len() != first.layers.len() {
            return Err(Error::Shape("layer counts differ".into()));
        }
        for (a, b) in first.layers.iter().zip(&other.layers) {
            if a.weight.shape() != b.weight.shape()
                || a.bias.shape() != b.bias.shape()
                || a.activation != b.activation
            {
                return Err(Error::Shape("merged models must share an architecture".into()));
            }
            if a.weight.scheme.bits != b.weight.scheme.bits {
                return Err(Error::Validation("merged models must share bit widths".into()));
            }
            match (&a.act_scheme, &b.act_scheme) {
                (None, None) => {}
                (Some(x), Some(y)) if x.bits == y.bits => {}
                _ => {
                    return Err(Error::Validation(
                        "merged models must share activation quantization".into(),
                    ))
                }
            }
        }
    }
    Ok(())
}

/// Merge one tensor position across models, optionally with per-model
/// noise; ties round half to even and results clamp into range.
fn merge_layer_ints(
    layers: &[&QuantizedLayer],
    noise: Option<(&mut Prng, &[f64])>,
) -> QuantizedTensor {
    let denom: f64 = layers.iter().map(|l| l.weight.scheme.step).sum();
    let merged_step = denom / layers.len() as f64;
    let scheme = QuantScheme {
        bits: layers[0].weight.scheme.bits,
        step: merged_step,
        target: layers[0].weight.scheme.target,
    };
    let len = layers[0].weight.ints().len();

    // Noise tensors drawn up front, model-major, to fix the stream order.
    let noise_values: Option<Vec<Vec<f64>>> = noise.map(|(rng, halves)| {
        halves
            .iter()
            .map(|&h| (0..len).map(|_| rng.uniform_sym(h)).collect())
            .collect()
    });

    let mut ints = Vec::with_capacity(len);
    for j in 0..len {
        let mut acc = 0.0;
        for (i, layer) in layers.iter().enumerate() {
            let mut v = f64::from(layer.weight.ints()[j]) * layer.weight.scheme.step;
            if let Some(eps) = &noise_values {
                v += eps[i][j];
            }
            acc += v;
        }
        let raw = math::round_half_even(acc / denom);
        let clamped = raw
            .max(scheme.qmin() as f64)
            .min(scheme.qmax() as f64);
        ints.push(clamped as i32);
    }
    QuantizedTensor::new(layers[0].weight.shape().to_vec(), ints, scheme)
        .expect("merged ints are clamped into range")
}

fn merge_bias(layers: &[&QuantizedLayer]) -> Result<Tensor> {
    let k = layers.len() as f64;
    let mut acc = Tensor::zeros(layers[0].bias.shape().to_vec())?;
    for l in layers {
        acc = acc.zip_with(&l.bias, |a, b| a + b)?;
    }
    acc.map(|v| v / k)
}

fn merge_act_scheme(layers: &[&QuantizedLayer]) -> Option<QuantScheme> {
    let first = layers[0].act_scheme.as_ref()?;
    let mean_step: f64 =
        layers.iter().map(|l| l.act_scheme.as_ref().unwrap().step).sum::<f64>()
            / layers.len() as f64;
    Some(QuantScheme {
        bits: first.bits,
        step: mean_step,
        target: first.target,
    })
}

/// Build a merged model; `with_noise` adds fresh `U[-Δᵢ/2, Δᵢ/2]` noise
/// to each operand before the integer merge.
fn build_merged(
    checkpoints: &[&QuantizedNet],
    rng: Option<&mut Prng>,
) -> Result<QuantizedNet> {
    let mut rng = rng;
    let mut layers = Vec::with_capacity(checkpoints[0].layers.len());
    for k in 0..checkpoints[0].layers.len() {
        let row: Vec<&QuantizedLayer> = checkpoints.iter().map(|c| &c.layers[k]).collect();
        let halves: Vec<f64> = row.iter().map(|l| l.weight.scheme.step / 2.0).collect();
        let weight = match rng.as_deref_mut() {
            Some(r) => merge_layer_ints(&row, Some((r, &halves))),
            None => merge_layer_ints(&row, None),
        };
        layers.push(QuantizedLayer {
            weight,
            bias: merge_bias(&row)?,
            activation: row[0].activation,
            act_scheme: merge_act_scheme(&row),
        });
    }
    Ok(QuantizedNet { layers })
}

/// Cosine of the angle between two flat vectors; zero vectors score 0.
fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = math::sqrt(a.iter().map(|&v| v * v).sum());
    let nb = math::sqrt(b.iter().map(|&v| v * v).sum());
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    dot / (na * nb)
}

/// Selection score of a merged parameter vector against the targets: the
/// average over ordered target pairs `(i, j)` of
/// `cos(θᵢ - m, θᵢ - θⱼ)`. For two targets this is the symmetric
/// two-sided score; `OneSided` keeps only the first target's view.
pub fn cosine_score_multi(
    candidate: &Network,
    targets: &[&Network],
    mode: CosineMode,
) -> Result<f64> {
    if targets.len() < 2 {
        return Err(Error::Validation("cosine score needs at least two targets".into()));
    }
    for t in targets {
        if !candidate.same_architecture(t) {
            return Err(Error::Shape("cosine score needs identical architectures".into()));
        }
    }
    let m = candidate.flat_params();
    let flat: Vec<Vec<f64>> = targets.iter().map(|t| t.flat_params()).collect();
    match mode {
        CosineMode::OneSided => {
            let a: Vec<f64> = flat[0].iter().zip(&m).map(|(&t, &mm)| t - mm).collect();
            let b: Vec<f64> = flat[0].iter().zip(&flat[1]).map(|(&x, &y)| x - y).collect();
            Ok(cosine(&a, &b))
        }
        CosineMode::Symmetric => {
            let mut total = 0.0;
            let mut pairs = 0usize;
            for i in 0..flat.len() {
                for j in 0..flat.len() {
                    if i == j {
                        continue;
                    }
                    let a: Vec<f64> =
                        flat[i].iter().zip(&m).map(|(&t, &mm)| t - mm).collect();
                    let b: Vec<f64> =
                        flat[i].iter().zip(&flat[j]).map(|(&x, &y)| x - y).collect();
                    total += cosine(&a, &b);
                    pairs += 1;
                }
            }
            Ok(total / pairs as f64)
        }
    }
}

/// Two-target symmetric cosine score:
/// `½[cos(θ₁-m, θ₁-θ₂) + cos(θ₂-m, θ₂-θ₁)]`.
pub fn cosine_score(candidate: &Network, t1: &Network, t2: &Network) -> Result<f64> {
    cosine_score_multi(candidate, &[t1, t2], CosineMode::Symmetric)
}

/// Deterministic integer-domain merge of two checkpoints.
pub fn merge_int_naive(qa: &QuantizedNet, qb: &QuantizedNet) -> Result<MergeCandidate> {
    merge_int_naive_multi(&[qa, qb])
}

/// K-way integer-domain merge: `I = round_half_even(Σ IᵢΔᵢ / Σ Δᵢ)`.
pub fn merge_int_naive_multi(checkpoints: &[&QuantizedNet]) -> Result<MergeCandidate> {
    check_mergeable(checkpoints)?;
    let merged = build_merged(checkpoints, None)?;
    let net = merged.to_network()?;
    let targets: Vec<Network> = checkpoints
        .iter()
        .map(|c| c.to_network())
        .collect::<Result<_>>()?;
    let refs: Vec<&Network> = targets.iter().collect();
    let score = cosine_score_multi(&net, &refs, CosineMode::Symmetric)?;
    Ok(MergeCandidate {
        net,
        quantized: merged,
        score,
        seed: 0,
    })
}

/// One fresh noise-sampled merge candidate (no selection).
pub fn sample_merge_candidate(
    checkpoints: &[&QuantizedNet],
    rng: &mut Prng,
    mode: CosineMode,
) -> Result<MergeCandidate> {
    check_mergeable(checkpoints)?;
    let merged = build_merged(checkpoints, Some(rng))?;
    let net = merged.to_network()?;
    let targets: Vec<Network> = checkpoints
        .iter()
        .map(|c| c.to_network())
        .collect::<Result<_>>()?;
    let refs: Vec<&Network> = targets.iter().collect();
    let score = cosine_score_multi(&net, &refs, mode)?;
    Ok(MergeCandidate {
        net,
        quantized: merged,
        score,
        seed: 0,
    })
}

/// Noise-sampled merging with cosine selection over two checkpoints.
pub fn merge_noise_sampled(
    qa: &QuantizedNet,
    qb: &QuantizedNet,
    n_candidates: usize,
    rng: &mut Prng,
) -> Result<MergeReport> {
    merge_noise_sampled_multi(&[qa, qb], n_candidates, rng, CosineMode::Symmetric)
}

/// K-way noise-sampled merging.
///
/// Candidate 0 is always the deterministic integer merge, so selection by
/// score can never fall below that baseline. Each sampled candidate draws
/// its noise from a stream derived from `(base_seed, index)`, making
/// candidate generation order-independent and safe to parallelize.
pub fn merge_noise_sampled_multi(
    checkpoints: &[&QuantizedNet],
    n_candidates: usize,
    rng: &mut Prng,
    mode: CosineMode,
) -> Result<MergeReport> {
    let base_seed = rng.next_u64();
    merge_noise_sampled_seeded(checkpoints, n_candidates, base_seed, mode)
}

/// The sampled candidate at index `k` (1-based) of a merge run.
pub fn noise_candidate_at(
    checkpoints: &[&QuantizedNet],
    base_seed: u64,
    k: usize,
    mode: CosineMode,
) -> Result<MergeCandidate> {
    let mut cand_rng = Prng::derived(base_seed, &format!("merge/candidate/{k}"));
    let mut candidate = sample_merge_candidate(checkpoints, &mut cand_rng, mode)?;
    candidate.seed = k as u64;
    Ok(candidate)
}

/// [`merge_noise_sampled_multi`] with an explicit base seed.
pub fn merge_noise_sampled_seeded(
    checkpoints: &[&QuantizedNet],
    n_candidates: usize,
    base_seed: u64,
    mode: CosineMode,
) -> Result<MergeReport> {
    if n_candidates < 1 {
        return Err(Error::Validation("need at least one sampled candidate".into()));
    }
    check_mergeable(checkpoints)?;

    let mut chosen = merge_int_naive_multi(checkpoints)?;
    if mode == CosineMode::OneSided {
        // Re-score the injected candidate under the requested mode.
        let targets: Vec<Network> = checkpoints
            .iter()
            .map(|c| c.to_network())
            .collect::<Result<_>>()?;
        let refs: Vec<&Network> = targets.iter().collect();
        chosen.score = cosine_score_multi(&chosen.net, &refs, mode)?;
    }
    let mut all_scores = Vec::with_capacity(n_candidates + 1);
    all_scores.push(chosen.score);

    for k in 1..=n_candidates {
        let candidate = noise_candidate_at(checkpoints, base_seed, k, mode)?;
        all_scores.push(candidate.score);
        if candidate.score > chosen.score {
            chosen = candidate;
        }
    }

    Ok(MergeReport {
        strategy: MergeStrategy::NoiseSampled,
        chosen,
        all_scores,
        per_domain_metric: Vec::new(),
        harmonic_mean: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{Activation, DenseLayer};
    use crate::quant::QuantTarget;

    fn qnet_scalar(ints: &[i32], step: f64, bits: u8) -> QuantizedNet {
        let scheme = QuantScheme::new(bits, step, QuantTarget::Weight).unwrap();
        let n = ints.len();
        QuantizedNet {
            layers: alloc::vec![QuantizedLayer {
                weight: QuantizedTensor::new(alloc::vec![1, n], ints.to_vec(), scheme).unwrap(),
                bias: Tensor::zeros(alloc::vec![1]).unwrap(),
                activation: Activation::Identity,
                act_scheme: None,
            }],
        }
    }

    fn scalar_net(params: &[f64]) -> Network {
        let n = params.len();
        Network::new(alloc::vec![DenseLayer::new(
            Tensor::matrix(1, n, params.to_vec()).unwrap(),
            Tensor::zeros(alloc::vec![1]).unwrap(),
            Activation::Identity,
        )
        .unwrap()])
        .unwrap()
    }

    #[test]
    fn fp_midpoint_trivial_cases() {
        let a = scalar_net(&[1.0]);
        let b = scalar_net(&[3.0]);
        let m = merge_fp_midpoint(&a, &b).unwrap();
        assert_eq!(m.flat_params()[0], 2.0);
        assert_eq!(merge_fp_midpoint(&a, &a).unwrap(), a);
        assert_eq!(
            merge_fp_midpoint(&a, &b).unwrap(),
            merge_fp_midpoint(&b, &a).unwrap()
        );
    }

    #[test]
    fn int_naive_equal_inputs_identity() {
        let qa = qnet_scalar(&[3, -2, 0], 0.1, 4);
        let m = merge_int_naive(&qa, &qa).unwrap();
        assert_eq!(m.quantized.layers[0].weight.ints(), &[3, -2, 0]);
        assert_eq!(m.quantized.layers[0].weight.scheme.step, 0.1);
    }

    #[test]
    fn int_naive_ambiguous_tie_rounds_half_even() {
        // (0.3 + 0.4) / 0.2 = 3.5: the ambiguous case; half-even gives 4.
        let qa = qnet_scalar(&[3], 0.1, 4);
        let qb = qnet_scalar(&[4], 0.1, 4);
        let m = merge_int_naive(&qa, &qb).unwrap();
        assert_eq!(m.quantized.layers[0].weight.ints(), &[4]);
        assert_eq!(m.quantized.layers[0].weight.scheme.step, 0.1);
    }

    #[test]
    fn int_naive_mixed_steps_hand_cases() {
        // Δ1 = 0.1, Δ2 = 0.3: in the reals (0.2 + 1.2) / 0.4 is the tie
        // 3.5, but the f64 evaluation lands a hair below and rounds to 3.
        let qa = qnet_scalar(&[2], 0.1, 4);
        let qb = qnet_scalar(&[4], 0.3, 4);
        let m = merge_int_naive(&qa, &qb).unwrap();
        let fp_truth =
            math::round_half_even((2.0 * 0.1 + 4.0 * 0.3) / (0.1 + 0.3)) as i32;
        assert_eq!(m.quantized.layers[0].weight.ints(), &[fp_truth]);
        assert_eq!(fp_truth, 3);
        assert!((m.quantized.layers[0].weight.scheme.step - 0.2).abs() < 1e-15);

        // Binary-exact steps produce the genuine tie: (0.25 + 1.5) / 0.5
        // = 3.5 exactly, and half-even resolves it to 4.
        let qa = qnet_scalar(&[2], 0.125, 4);
        let qb = qnet_scalar(&[4], 0.375, 4);
        let m = merge_int_naive(&qa, &qb).unwrap();
        assert_eq!(m.quantized.layers[0].weight.ints(), &[4]);

        // Δ1 = 0.1, Δ2 = 0.2: (0.2 + 0.8) / 0.3 = 3.33 -> 3.
        let qa = qnet_scalar(&[2], 0.1, 4);
        let qb = qnet_scalar(&[4], 0.2, 4);
        let m = merge_int_naive(&qa, &qb).unwrap();
        assert_eq!(m.quantized.layers[0].weight.ints(), &[3]);
    }

    #[test]
    fn int_naive_symmetric_in_arguments() {
        let mut rng = Prng::seed_from(77);
        for _ in 0..50 {
            let ints_a: Vec<i32> = (0..6).map(|_| (rng.next_u64() % 15) as i32 - 8).collect();
            let ints_b: Vec<i32> = (0..6).map(|_| (rng.next_u64() % 15) as i32 - 8).collect();
            let qa = qnet_scalar(&ints_a, 0.11, 4);
            let qb = qnet_scalar(&ints_b, 0.13, 4);
            let ab = merge_int_naive(&qa, &qb).unwrap();
            let ba = merge_int_naive(&qb, &qa).unwrap();
            assert_eq!(
                ab.quantized.layers[0].weight.ints(),
                ba.quantized.layers[0].weight.ints()
            );
        }
    }

    #[test]
    fn int_naive_clamps_into_range() {
        let qa = qnet_scalar(&[7, -8], 0.3, 4);
        let qb = qnet_scalar(&[7, -8], 0.1, 4);
        let m = merge_int_naive(&qa, &qb).unwrap();
        let scheme = &m.quantized.layers[0].weight.scheme;
        for &i in m.quantized.layers[0].weight.ints() {
            assert!(i >= scheme.qmin() && i <= scheme.qmax());
        }
    }

    #[test]
    fn int_naive_rejects_mismatched_bits() {
        let qa = qnet_scalar(&[1], 0.1, 4);
        let qb = qnet_scalar(&[1], 0.1, 3);
        assert!(merge_int_naive(&qa, &qb).is_err());
    }

    #[test]
    fn noise_limit_equals_midpoint_quantization() {
        // Tiny steps and even integer sums: every candidate reproduces the
        // quantized floating-point midpoint.
        let qa = qnet_scalar(&[2, -4, 6], 1e-9, 4);
        let qb = qnet_scalar(&[4, -2, 0], 1e-9, 4);
        let naive = merge_int_naive(&qa, &qb).unwrap();
        let mut rng = Prng::seed_from(11);
        for _ in 0..50 {
            let c = sample_merge_candidate(&[&qa, &qb], &mut rng, CosineMode::Symmetric)
                .unwrap();
            assert_eq!(
                c.quantized.layers[0].weight.ints(),
                naive.quantized.layers[0].weight.ints()
            );
        }
        assert_eq!(naive.quantized.layers[0].weight.ints(), &[3, -3, 3]);
    }

    #[test]
    fn noise_splits_the_tie_roughly_evenly() {
        let qa = qnet_scalar(&[3], 0.1, 4);
        let qb = qnet_scalar(&[4], 0.1, 4);
        let mut rng = Prng::seed_from(13);
        let mut low = 0usize;
        let n = 10_000;
        for _ in 0..n {
            let c = sample_merge_candidate(&[&qa, &qb], &mut rng, CosineMode::Symmetric)
                .unwrap();
            match c.quantized.layers[0].weight.ints()[0] {
                3 => low += 1,
                4 => {}
                other => panic!("unexpected merged int {other}"),
            }
        }
        let frac = low as f64 / n as f64;
        assert!((0.45..=0.55).contains(&frac), "fraction of 3s: {frac}");
    }

    #[test]
    fn chosen_candidate_dominates_pool() {
        let qa = qnet_scalar(&[3, -5, 7, 0, 2, -1], 0.12, 4);
        let qb = qnet_scalar(&[4, -4, 5, 1, 0, -2], 0.1, 4);
        let mut rng = Prng::seed_from(17);
        let report = merge_noise_sampled(&qa, &qb, 30, &mut rng).unwrap();
        assert_eq!(report.all_scores.len(), 31);
        for &s in &report.all_scores {
            assert!(report.chosen.score >= s);
        }
        // Injected naive candidate is score 0 in the pool.
        let naive = merge_int_naive(&qa, &qb).unwrap();
        assert_eq!(report.all_scores[0], naive.score);
        assert!(report.chosen.score >= naive.score);
    }

    #[test]
    fn noise_sampling_is_deterministic_given_rng() {
        let qa = qnet_scalar(&[3, -5, 7], 0.12, 4);
        let qb = qnet_scalar(&[4, -4, 5], 0.1, 4);
        let a = merge_noise_sampled(&qa, &qb, 8, &mut Prng::seed_from(3)).unwrap();
        let b = merge_noise_sampled(&qa, &qb, 8, &mut Prng::seed_from(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cosine_score_midpoint_is_one() {
        let t1 = scalar_net(&[1.0, 2.0]);
        let t2 = scalar_net(&[3.0, -2.0]);
        let mid = merge_fp_midpoint(&t1, &t2).unwrap();
        let s = cosine_score(&mid, &t1, &t2).unwrap();
        assert!((s - 1.0).abs() < 1e-12, "{s}");
    }

    #[test]
    fn cosine_score_decreases_with_orthogonal_displacement() {
        // Targets on the x-axis; displace the midpoint along y.
        let t1 = scalar_net(&[-1.0, 0.0]);
        let t2 = scalar_net(&[1.0, 0.0]);
        let mut last = 2.0;
        for dy in [0.0, 0.25, 0.5, 1.0, 2.0] {
            let m = scalar_net(&[0.0, dy]);
            let s = cosine_score(&m, &t1, &t2).unwrap();
            assert!(s < last, "score {s} at dy {dy}");
            assert!((-1.0..=1.0).contains(&s));
            last = s;
        }
    }

    #[test]
    fn cosine_score_degenerate_targets_zero() {
        let t = scalar_net(&[1.0, 1.0]);
        let m = scalar_net(&[0.0, 0.0]);
        assert_eq!(cosine_score(&m, &t, &t).unwrap(), 0.0);
    }

    #[test]
    fn one_sided_mode_matches_first_view() {
        let t1 = scalar_net(&[-1.0, 0.0]);
        let t2 = scalar_net(&[1.0, 0.0]);
        let m = scalar_net(&[0.2, 0.4]);
        let one = cosine_score_multi(&m, &[&t1, &t2], CosineMode::OneSided).unwrap();
        // Hand evaluation: cos(t1 - m, t1 - t2).
        let a = [-1.2, -0.4];
        let b = [-2.0, 0.0];
        let expected = (a[0] * b[0] + a[1] * b[1])
            / ((a[0] * a[0] + a[1] * a[1]) as f64).sqrt()
            / ((b[0] * b[0] + b[1] * b[1]) as f64).sqrt();
        assert!((one - expected).abs() < 1e-12);
    }

    #[test]
    fn three_way_merge_shapes() {
        let qa = qnet_scalar(&[3, -5], 0.12, 4);
        let qb = qnet_scalar(&[4, -4], 0.1, 4);
        let qc = qnet_scalar(&[2, -6], 0.11, 4);
        let mut rng = Prng::seed_from(29);
        let report =
            merge_noise_sampled_multi(&[&qa, &qb, &qc], 5, &mut rng, CosineMode::Symmetric)
                .unwrap();
        assert_eq!(report.all_scores.len(), 6);
        let step = report.chosen.quantized.layers[0].weight.scheme.step;
        assert!((step - (0.12 + 0.1 + 0.11) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn harmonic_mean_cases() {
        assert_eq!(harmonic_mean(&[0.8, 0.8]).unwrap(), 0.8);
        assert!((harmonic_mean(&[1.0, 3.0]).unwrap() - 1.5).abs() < 1e-12);
        // 3 / (1/60 + 1/40 + 1/80) = 720/13.
        let expected = 720.0 / 13.0;
        assert!((harmonic_mean(&[60.0, 40.0, 80.0]).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 55.3846).abs() < 0.001);
        assert!(matches!(
            harmonic_mean(&[1.0, 0.0]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            harmonic_mean(&[1.0, -2.0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn harmonic_mean_below_arithmetic_in_report() {
        let qa = qnet_scalar(&[3, -5], 0.12, 4);
        let qb = qnet_scalar(&[4, -4], 0.1, 4);
        let mut rng = Prng::seed_from(41);
        let mut report = merge_noise_sampled(&qa, &qb, 4, &mut rng).unwrap();
        report
            .attach_metrics(alloc::vec![
                DomainMetric {
                    domain: String::from("t1"),
                    accuracy: 0.9,
                },
                DomainMetric {
                    domain: String::from("t2"),
                    accuracy: 0.6,
                },
            ])
            .unwrap();
        let h = report.harmonic_mean.unwrap();
        assert!(h <= (0.9 + 0.6) / 2.0);
    }
}
