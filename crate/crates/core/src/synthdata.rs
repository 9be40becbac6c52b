//! Seeded 2-D classification domains: one source plus rotated targets.
//!
//! Domains differ by a rotation about the origin, a controllable analogue
//! of domain shift. Same spec, same bits: every draw is derived from the
//! spec's seed through named sub-streams.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::nnet::Batch;
use crate::rng::Prng;
use crate::tensor::Tensor;

/// Base classification task before rotation and noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseTask {
    /// Two Gaussian blobs with means (-1, 0) and (+1, 0).
    TwoGaussians,
    /// Two interleaved half rings (a two-moons-like mixture).
    TwoMoons,
}

/// Everything needed to generate a domain deterministically.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub base_task: BaseTask,
    pub rotation_deg: f64,
    pub noise_std: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl DomainSpec {
    fn validate(&self) -> Result<()> {
        if self.n_train < 8 || self.n_test < 8 {
            return Err(Error::Validation(format!(
                "need at least 8 train and test samples, got {} / {}",
                self.n_train, self.n_test
            )));
        }
        if !(0.0..2.0).contains(&self.noise_std) {
            return Err(Error::Validation(format!(
                "noise_std must be in [0, 2), got {}",
                self.noise_std
            )));
        }
        if !self.rotation_deg.is_finite() {
            return Err(Error::Validation("rotation must be finite".into()));
        }
        Ok(())
    }
}

/// Train and test splits drawn independently from one spec.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Batch,
    pub test: Batch,
    pub spec: DomainSpec,
}

/// Generates one domain: 2-D inputs, 2 balanced classes, rotation applied
/// to every point about the origin.
pub fn make_domain(spec: &DomainSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut train_rng = Prng::derived(spec.seed, "synthdata/train");
    let mut test_rng = Prng::derived(spec.seed, "synthdata/test");
    let train = sample_split(spec, spec.n_train, &mut train_rng)?;
    let test = sample_split(spec, spec.n_test, &mut test_rng)?;
    Ok(Dataset {
        train,
        test,
        spec: spec.clone(),
    })
}

fn sample_split(spec: &DomainSpec, n: usize, rng: &mut Prng) -> Result<Batch> {
    let mut xs = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    // Alternating labels keep the classes balanced to within one sample.
    for i in 0..n {
        let label = i % 2;
        let (mut x, mut y) = base_point(spec.base_task, label, rng);
        x += spec.noise_std * rng.standard_normal();
        y += spec.noise_std * rng.standard_normal();
        let (x, y) = rotate(x, y, spec.rotation_deg);
        xs.push(x);
        xs.push(y);
        labels.push(label);
    }
    Batch::new(Tensor::matrix(n, 2, xs)?, labels, 2)
}

fn base_point(task: BaseTask, label: usize, rng: &mut Prng) -> (f64, f64) {
    match task {
        BaseTask::TwoGaussians => {
            if label == 0 {
                (-1.0, 0.0)
            } else {
                (1.0, 0.0)
            }
        }
        BaseTask::TwoMoons => {
            let t = rng.uniform_01() * core::f64::consts::PI;
            if label == 0 {
                (math::cos(t), math::sin(t))
            } else {
                (1.0 - math::cos(t), 0.5 - math::sin(t))
            }
        }
    }
}

/// Rotate a point about the origin by `deg` degrees counter-clockwise.
///
/// The angle is normalized modulo 360 and a zero rotation is the exact
/// identity, so 0° and 360° yield bit-identical datasets.
pub fn rotate(x: f64, y: f64, deg: f64) -> (f64, f64) {
    let deg = normalize_deg(deg);
    if deg == 0.0 {
        return (x, y);
    }
    let rad = deg * core::f64::consts::PI / 180.0;
    let (s, c) = (math::sin(rad), math::cos(rad));
    (x * c - y * s, x * s + y * c)
}

fn normalize_deg(deg: f64) -> f64 {
    let r = deg % 360.0;
    if r < 0.0 {
        r + 360.0
    } else {
        r
    }
}

/// Write a batch as CSV rows `x0,x1,label` (header included).
pub fn to_csv(batch: &Batch) -> alloc::string::String {
    use core::fmt::Write;
    let mut out = alloc::string::String::from("x0,x1,label\n");
    for (i, &label) in batch.labels.iter().enumerate() {
        let _ = writeln!(out, "{},{},{}", batch.inputs.at(i, 0), batch.inputs.at(i, 1), label);
    }
    out
}
