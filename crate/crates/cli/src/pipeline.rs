//! In-memory experiment stages: data, source training, adaptation,
//! quantization, merging, and evaluation.
//!
//! Every stage derives its random stream from `(master_seed, stage tag)`
//! so the whole pipeline is bit-reproducible and stages stay independent.

use mergeq_core::analysis;
use mergeq_core::hdrq::{self, PtqConfig, PtqResult};
use mergeq_core::merge::{self, CosineMode, DomainMetric, MergeCandidate, MergeReport};
use mergeq_core::nnet::{self, Batch, Network, OptimState};
use mergeq_core::quant::QuantizedNet;
use mergeq_core::rng::seed_stream;
use mergeq_core::synthdata::{make_domain, Dataset, DomainSpec};
use mergeq_core::tensor::Tensor;
use mergeq_core::Prng;
use rayon::prelude::*;

use crate::checkpoint::Model;
use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

/// One configured laboratory: everything is a pure function of the
/// config and the master seed.
pub struct Lab<'a> {
    pub cfg: &'a ExperimentConfig,
    pub master_seed: u64,
}

impl<'a> Lab<'a> {
    pub fn new(cfg: &'a ExperimentConfig, master_seed: u64) -> Self {
        Self { cfg, master_seed }
    }

    /// Number of target domains (domain 0 is the source).
    pub fn num_targets(&self) -> usize {
        self.cfg.data.target_rotations_deg.len()
    }

    /// Domain spec for index 0 (source) or 1..=K (targets).
    pub fn domain_spec(&self, idx: usize) -> Result<DomainSpec> {
        let rotation = if idx == 0 {
            self.cfg.data.source_rotation_deg
        } else {
            let targets = &self.cfg.data.target_rotations_deg;
            *targets.get(idx - 1).ok_or_else(|| {
                CliError::Config(format!(
                    "domain {idx} out of range (configured targets: {})",
                    targets.len()
                ))
            })?
        };
        Ok(DomainSpec {
            base_task: self.cfg.data.base_task,
            rotation_deg: rotation,
            noise_std: self.cfg.data.noise_std,
            n_train: self.cfg.data.n_train,
            n_test: self.cfg.data.n_test,
            seed: seed_stream(self.master_seed, &format!("data/domain{idx}")),
        })
    }

    pub fn domain(&self, idx: usize) -> Result<Dataset> {
        Ok(make_domain(&self.domain_spec(idx)?)?)
    }

    fn net_dims(&self) -> Vec<usize> {
        let mut dims = vec![2];
        dims.extend_from_slice(&self.cfg.train.hidden);
        dims.push(2);
        dims
    }

    /// Train the source model to the plateau-or-max-epochs criterion.
    pub fn train_source(&self) -> Result<(Network, f64)> {
        let d = self.domain(0)?;
        let t = &self.cfg.train;
        let mut init_rng = Prng::derived(self.master_seed, "train/init");
        let mut net = Network::init_he(&self.net_dims(), &mut init_rng)?;
        let mut shuffle_rng = Prng::derived(self.master_seed, "train/shuffle");

        let n = d.train.len();
        let batch = t.batch_size.min(n);
        let steps_per_epoch = (n / batch).max(1);
        let total = t.max_epochs * steps_per_epoch;
        let mut state = OptimState::new(net.param_count());
        let mut step = 0usize;
        let mut prev = f64::INFINITY;
        let mut stall = 0usize;

        'epochs: for _ in 0..t.max_epochs {
            let perm = permutation(n, &mut shuffle_rng);
            let mut epoch_loss = 0.0;
            for b in 0..steps_per_epoch {
                let idx = &perm[b * batch..(b + 1) * batch];
                let mini = subset_batch(&d.train, idx)?;
                let (loss, grads) = nnet::loss_and_grad(&net, &mini)?;
                let lr = nnet::lr_schedule(step, total, t.warmup_steps.min(total - 1), t.lr0)?;
                let mut params = net.flat_params();
                nnet::adam_step(&mut params, &grads.flat(), &mut state, lr)?;
                net.set_flat_params(&params)?;
                epoch_loss += loss;
                step += 1;
            }
            epoch_loss /= steps_per_epoch as f64;
            if prev - epoch_loss < t.plateau_tol * prev.abs().max(1e-12) {
                stall += 1;
                if stall >= t.patience {
                    break 'epochs;
                }
            } else {
                stall = 0;
            }
            prev = epoch_loss;
        }

        let acc = nnet::accuracy(&net, &d.test)?;
        Ok((net, acc))
    }

    /// Fine-tune the source on one target domain; returns the adapted
    /// model and its l2 distance from the source.
    pub fn adapt(&self, source: &Network, target_idx: usize) -> Result<(Network, f64)> {
        if target_idx == 0 || target_idx > self.num_targets() {
            return Err(CliError::Config(format!(
                "adaptation target must be in 1..={}, got {target_idx}",
                self.num_targets()
            )));
        }
        let d = self.domain(target_idx)?;
        let t = &self.cfg.train;
        let mut shuffle_rng =
            Prng::derived(self.master_seed, &format!("adapt/domain{target_idx}/shuffle"));
        let mut net = source.clone();
        let mut state = OptimState::new(net.param_count());

        let n = d.train.len();
        let batch = t.batch_size.min(n);
        let steps_per_epoch = (n / batch).max(1);
        let warmup = (t.adapt_steps / 10).min(t.adapt_steps - 1);
        let mut perm = permutation(n, &mut shuffle_rng);
        for step in 0..t.adapt_steps {
            let b = step % steps_per_epoch;
            if step > 0 && b == 0 {
                perm = permutation(n, &mut shuffle_rng);
            }
            let idx = &perm[b * batch..(b + 1) * batch];
            let mini = subset_batch(&d.train, idx)?;
            let grads = nnet::grad(&net, &mini)?;
            let lr = nnet::lr_schedule(step, t.adapt_steps, warmup, t.adapt_lr)?;
            let mut params = net.flat_params();
            nnet::adam_step(&mut params, &grads.flat(), &mut state, lr)?;
            net.set_flat_params(&params)?;
        }

        let distance = hdrq::distance_penalty(&net, source)?.sqrt();
        Ok((net, distance))
    }

    /// Calibration stream: `calib_batches` mini-batches cycled from the
    /// front of the domain's training split.
    pub fn calibration(&self, dataset: &Dataset) -> Result<Vec<Batch>> {
        let n = dataset.train.len();
        let batch = self.cfg.train.batch_size.min(n);
        let mut out = Vec::with_capacity(self.cfg.ptq.calib_batches);
        for k in 0..self.cfg.ptq.calib_batches {
            let idx: Vec<usize> = (0..batch).map(|j| (k * batch + j) % n).collect();
            out.push(subset_batch(&dataset.train, &idx)?);
        }
        Ok(out)
    }

    /// The core PTQ configuration for one target domain, stream-seeded
    /// from the master seed (method and λ do not change the stream, so
    /// method comparisons are paired).
    pub fn ptq_config(&self, target_idx: usize) -> PtqConfig {
        let p = &self.cfg.ptq;
        PtqConfig {
            weight_bits: p.weight_bits,
            act_bits: p.act_bits,
            iterations: p.iterations,
            fake_quant_tail: p.fake_quant_tail,
            scale: p.scale,
            lambda_dist: p.lambda_dist,
            lr0: p.lr0,
            warmup: p.warmup,
            drop_prob: p.drop_prob,
            calib_batches: p.calib_batches,
            seed: seed_stream(self.master_seed, &format!("ptq/domain{target_idx}")),
            method: p.method,
            distance_norm: p.distance_norm,
        }
    }

    /// Reconstruct (quantize) an adapted model against its target domain.
    pub fn quantize(
        &self,
        adapted: &Network,
        source: &Network,
        target_idx: usize,
    ) -> Result<PtqResult> {
        let d = self.domain(target_idx)?;
        let calib = self.calibration(&d)?;
        let cfg = self.ptq_config(target_idx);
        Ok(hdrq::reconstruct(adapted, source, &calib, &cfg)?)
    }

    /// Accuracy of a model on one domain's test split.
    pub fn eval_model(&self, model: &Model, domain_idx: usize) -> Result<f64> {
        let d = self.domain(domain_idx)?;
        Ok(match model {
            Model::Float(net) => nnet::accuracy(net, &d.test)?,
            Model::Quantized(q) => q.accuracy(&d.test)?,
        })
    }

    /// Per-target metrics of a merged model, in domain order.
    pub fn target_metrics(&self, model: &Model) -> Result<Vec<DomainMetric>> {
        let mut out = Vec::with_capacity(self.num_targets());
        for idx in 1..=self.num_targets() {
            out.push(DomainMetric {
                domain: format!("target{idx}"),
                accuracy: self.eval_model(model, idx)?,
            });
        }
        Ok(out)
    }

    /// Noise-sampled merge with the candidate pool scored on `jobs`
    /// threads; results are identical for any worker count.
    pub fn noise_sampled_merge(
        &self,
        checkpoints: &[&QuantizedNet],
        n_candidates: usize,
        mode: CosineMode,
        jobs: usize,
    ) -> Result<MergeReport> {
        let base_seed = seed_stream(self.master_seed, "merge/noise");
        noise_sampled_with_jobs(checkpoints, n_candidates, base_seed, mode, jobs)
    }
}

/// Parallel twin of `merge_noise_sampled_seeded`: candidates come from
/// index-derived streams, so any evaluation order yields the same report.
pub fn noise_sampled_with_jobs(
    checkpoints: &[&QuantizedNet],
    n_candidates: usize,
    base_seed: u64,
    mode: CosineMode,
    jobs: usize,
) -> Result<MergeReport> {
    if jobs <= 1 {
        return Ok(merge::merge_noise_sampled_seeded(
            checkpoints,
            n_candidates,
            base_seed,
            mode,
        )?);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Config(format!("cannot build thread pool: {e}")))?;
    let naive = merge::merge_int_naive_multi(checkpoints)?;
    let sampled: Vec<MergeCandidate> = pool.install(|| {
        (1..=n_candidates)
            .into_par_iter()
            .map(|k| merge::noise_candidate_at(checkpoints, base_seed, k, mode))
            .collect::<mergeq_core::Result<Vec<_>>>()
    })?;

    let mut chosen = naive;
    if mode == CosineMode::OneSided {
        let targets: Vec<Network> = checkpoints
            .iter()
            .map(|c| c.to_network())
            .collect::<mergeq_core::Result<_>>()?;
        let refs: Vec<&Network> = targets.iter().collect();
        chosen.score = merge::cosine_score_multi(&chosen.net, &refs, mode)?;
    }
    let mut all_scores = Vec::with_capacity(n_candidates + 1);
    all_scores.push(chosen.score);
    for candidate in sampled {
        all_scores.push(candidate.score);
        if candidate.score > chosen.score {
            chosen = candidate;
        }
    }
    Ok(MergeReport {
        strategy: merge::MergeStrategy::NoiseSampled,
        chosen,
        all_scores,
        per_domain_metric: Vec::new(),
        harmonic_mean: None,
    })
}

/// Mean of all parameter vectors, the K-way floating-point midpoint.
pub fn fp_mean_network(nets: &[Network]) -> Result<Network> {
    let first = &nets[0];
    for other in &nets[1..] {
        if !first.same_architecture(other) {
            return Err(CliError::Core(mergeq_core::Error::Shape(
                "midpoint merge needs identical architectures".into(),
            )));
        }
    }
    let k = nets.len() as f64;
    let mut acc = vec![0.0; first.param_count()];
    for net in nets {
        for (a, p) in acc.iter_mut().zip(net.flat_params()) {
            *a += p;
        }
    }
    for a in &mut acc {
        *a /= k;
    }
    let mut out = first.clone();
    out.set_flat_params(&acc)?;
    Ok(out)
}

/// Seeded Fisher-Yates permutation of `0..n`.
pub fn permutation(n: usize, rng: &mut Prng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        perm.swap(i, j);
    }
    perm
}

/// Rows of `batch` selected by index, in order.
pub fn subset_batch(batch: &Batch, idx: &[usize]) -> Result<Batch> {
    let dim = batch.inputs.shape()[1];
    let mut data = Vec::with_capacity(idx.len() * dim);
    let mut labels = Vec::with_capacity(idx.len());
    for &i in idx {
        for c in 0..dim {
            data.push(batch.inputs.at(i, c));
        }
        labels.push(batch.labels[i]);
    }
    Ok(Batch::new(
        Tensor::matrix(idx.len(), dim, data)?,
        labels,
        batch.num_classes,
    )?)
}

/// Mean cross-entropy barrier report between two models on one domain.
pub fn barrier_between(
    lab: &Lab<'_>,
    a: &Model,
    b: &Model,
    domain_idx: usize,
    grid_n: usize,
) -> Result<analysis::BarrierReport> {
    let d = lab.domain(domain_idx)?;
    let net_a = a.to_network()?;
    let net_b = b.to_network()?;
    Ok(analysis::error_barrier(&net_a, &net_b, &d.test, grid_n)?)
}
