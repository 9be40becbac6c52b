//! Experiment configuration files.
//!
//! Format: `[section]` headers with `key = value` lines and `#` comments.
//! The five sections `[data]`, `[train]`, `[ptq]`, `[merge]`, and
//! `[analysis]` must all be present. Unknown sections or keys are
//! rejected; missing keys fall back to defaults and produce a notice.

use std::collections::BTreeMap;
use std::path::Path;

use mergeq_core::hdrq::{DistanceNorm, PtqMethod};
use mergeq_core::merge::{CosineMode, MergeStrategy};
use mergeq_core::synthdata::BaseTask;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub base_task: BaseTask,
    pub source_rotation_deg: f64,
    pub target_rotations_deg: Vec<f64>,
    pub noise_std: f64,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr0: f64,
    pub warmup_steps: usize,
    pub plateau_tol: f64,
    pub patience: usize,
    pub adapt_steps: usize,
    pub adapt_lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PtqFileConfig {
    pub weight_bits: u8,
    pub act_bits: u8,
    pub iterations: usize,
    pub fake_quant_tail: usize,
    pub scale: f64,
    pub lambda_dist: f64,
    pub lr0: f64,
    pub warmup: usize,
    pub drop_prob: f64,
    pub calib_batches: usize,
    pub method: PtqMethod,
    pub distance_norm: DistanceNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeConfig {
    pub strategy: MergeStrategy,
    pub n_candidates: usize,
    pub cosine: CosineMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub grid_n: usize,
    pub surface_nu: usize,
    pub surface_nv: usize,
    pub probes: usize,
    pub probe_h: f64,
    /// Explicit surface window; `None` derives one from the model
    /// coordinates.
    pub surface_extent: Option<(f64, f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub train: TrainConfig,
    pub ptq: PtqFileConfig,
    pub merge: MergeConfig,
    pub analysis: AnalysisConfig,
}

/// A parsed config plus the defaulted-key notices to log.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub notices: Vec<String>,
}

pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<LoadedConfig> {
    let sections = split_sections(text)?;
    const REQUIRED: [&str; 5] = ["data", "train", "ptq", "merge", "analysis"];
    for name in REQUIRED {
        if !sections.contains_key(name) {
            return Err(CliError::Config(format!("missing [{name}] section")));
        }
    }
    for name in sections.keys() {
        if !REQUIRED.contains(&name.as_str()) {
            return Err(CliError::Config(format!("unknown section [{name}]")));
        }
    }

    let mut notices = Vec::new();
    let data = parse_data(&sections["data"], &mut notices)?;
    let train = parse_train(&sections["train"], &mut notices)?;
    let ptq = parse_ptq(&sections["ptq"], &mut notices)?;
    let merge = parse_merge(&sections["merge"], &mut notices)?;
    let analysis = parse_analysis(&sections["analysis"], &mut notices)?;
    Ok(LoadedConfig {
        config: ExperimentConfig {
            data,
            train,
            ptq,
            merge,
            analysis,
        },
        notices,
    })
}

type Section = BTreeMap<String, String>;

fn split_sections(text: &str) -> Result<BTreeMap<String, Section>> {
    let mut out: BTreeMap<String, Section> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let name = name.trim().to_string();
            if out.contains_key(&name) {
                return Err(CliError::Config(format!(
                    "line {}: duplicate section [{name}]",
                    lineno + 1
                )));
            }
            out.insert(name.clone(), Section::new());
            current = Some(name);
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Config(format!(
                "line {}: expected `key = value`, got `{line}`",
                lineno + 1
            )));
        };
        let Some(section) = &current else {
            return Err(CliError::Config(format!(
                "line {}: `{line}` appears before any [section]",
                lineno + 1
            )));
        };
        let key = key.trim().to_string();
        let entry = out.get_mut(section).unwrap();
        if entry.contains_key(&key) {
            return Err(CliError::Config(format!(
                "line {}: duplicate key `{key}` in [{section}]",
                lineno + 1
            )));
        }
        entry.insert(key, value.trim().to_string());
    }
    Ok(out)
}

/// Pulls typed values out of one section, tracking unknown keys and
/// defaulted keys.
struct Reader<'a> {
    name: &'a str,
    section: &'a Section,
    seen: Vec<String>,
    notices: &'a mut Vec<String>,
}

impl<'a> Reader<'a> {
    fn new(name: &'a str, section: &'a Section, notices: &'a mut Vec<String>) -> Self {
        Self {
            name,
            section,
            seen: Vec::new(),
            notices,
        }
    }

    fn raw(&mut self, key: &str) -> Option<&'a str> {
        self.seen.push(key.to_string());
        self.section.get(key).map(|s| s.as_str())
    }

    fn get<T, F>(&mut self, key: &str, default: T, parse: F) -> Result<T>
    where
        T: std::fmt::Display + Copy,
        F: Fn(&str) -> Option<T>,
    {
        match self.raw(key) {
            Some(text) => parse(text).ok_or_else(|| {
                CliError::Config(format!(
                    "[{}] {key}: cannot parse `{text}`",
                    self.name
                ))
            }),
            None => {
                self.notices.push(format!(
                    "notice: [{}] {key} not set, using default {default}",
                    self.name
                ));
                Ok(default)
            }
        }
    }

    fn get_with<T, F>(&mut self, key: &str, default: T, describe: &str, parse: F) -> Result<T>
    where
        F: Fn(&str) -> Option<T>,
    {
        match self.raw(key) {
            Some(text) => parse(text).ok_or_else(|| {
                CliError::Config(format!(
                    "[{}] {key}: cannot parse `{text}`",
                    self.name
                ))
            }),
            None => {
                self.notices.push(format!(
                    "notice: [{}] {key} not set, using default {describe}",
                    self.name
                ));
                Ok(default)
            }
        }
    }

    fn finish(self) -> Result<()> {
        for key in self.section.keys() {
            if !self.seen.iter().any(|s| s == key) {
                return Err(CliError::Config(format!(
                    "[{}] unknown key `{key}`",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

fn parse_f64(s: &str) -> Option<f64> {
    s.parse().ok()
}

fn parse_usize(s: &str) -> Option<usize> {
    s.parse().ok()
}

fn parse_u8(s: &str) -> Option<u8> {
    s.parse().ok()
}

fn parse_f64_list(s: &str) -> Option<Vec<f64>> {
    s.split(',').map(|p| p.trim().parse().ok()).collect()
}

fn parse_usize_list(s: &str) -> Option<Vec<usize>> {
    s.split(',').map(|p| p.trim().parse().ok()).collect()
}

fn parse_data(section: &Section, notices: &mut Vec<String>) -> Result<DataConfig> {
    let mut r = Reader::new("data", section, notices);
    let base_task = r.get_with("base_task", BaseTask::TwoGaussians, "two-gaussians", |s| {
        match s {
            "two-gaussians" => Some(BaseTask::TwoGaussians),
            "two-moons" => Some(BaseTask::TwoMoons),
            _ => None,
        }
    })?;
    let source_rotation_deg = r.get("source_rotation_deg", 0.0, parse_f64)?;
    let target_rotations_deg = r.get_with(
        "target_rotations_deg",
        vec![40.0, -40.0],
        "40,-40",
        parse_f64_list,
    )?;
    let noise_std = r.get("noise_std", 0.25, parse_f64)?;
    let n_train = r.get("n_train", 512, parse_usize)?;
    let n_test = r.get("n_test", 512, parse_usize)?;
    r.finish()?;
    if target_rotations_deg.is_empty() {
        return Err(CliError::Config(
            "[data] target_rotations_deg needs at least one target".into(),
        ));
    }
    Ok(DataConfig {
        base_task,
        source_rotation_deg,
        target_rotations_deg,
        noise_std,
        n_train,
        n_test,
    })
}

fn parse_train(section: &Section, notices: &mut Vec<String>) -> Result<TrainConfig> {
    let mut r = Reader::new("train", section, notices);
    let hidden = r.get_with("hidden", vec![16], "16", parse_usize_list)?;
    let batch_size = r.get("batch_size", 32, parse_usize)?;
    let max_epochs = r.get("max_epochs", 80, parse_usize)?;
    let lr0 = r.get("lr0", 0.02, parse_f64)?;
    let warmup_steps = r.get("warmup_steps", 100, parse_usize)?;
    let plateau_tol = r.get("plateau_tol", 1e-4, parse_f64)?;
    let patience = r.get("patience", 8, parse_usize)?;
    let adapt_steps = r.get("adapt_steps", 400, parse_usize)?;
    let adapt_lr = r.get("adapt_lr", 2e-3, parse_f64)?;
    r.finish()?;
    if batch_size == 0 || max_epochs == 0 || adapt_steps == 0 {
        return Err(CliError::Config(
            "[train] batch_size, max_epochs, and adapt_steps must be positive".into(),
        ));
    }
    Ok(TrainConfig {
        hidden,
        batch_size,
        max_epochs,
        lr0,
        warmup_steps,
        plateau_tol,
        patience,
        adapt_steps,
        adapt_lr,
    })
}

fn parse_ptq(section: &Section, notices: &mut Vec<String>) -> Result<PtqFileConfig> {
    let mut r = Reader::new("ptq", section, notices);
    let weight_bits = r.get("weight_bits", 4, parse_u8)?;
    let act_bits = r.get("act_bits", 8, parse_u8)?;
    let iterations = r.get("iterations", 20_000, parse_usize)?;
    let fake_quant_tail = r.get("fake_quant_tail", 3_500, parse_usize)?;
    let scale = r.get("scale", 0.05, parse_f64)?;
    let lambda_dist = r.get("lambda_dist", 5e-2, parse_f64)?;
    let lr0 = r.get("lr0", 1e-3, parse_f64)?;
    let warmup = r.get("warmup", 1_000, parse_usize)?;
    let drop_prob = r.get("drop_prob", 0.5, parse_f64)?;
    let calib_batches = r.get("calib_batches", 4, parse_usize)?;
    let method = r.get_with("method", PtqMethod::Hdrq, "hdrq", |s| match s {
        "hdrq" => Some(PtqMethod::Hdrq),
        "recon_only" => Some(PtqMethod::ReconOnly),
        "recon_drop" => Some(PtqMethod::ReconDrop),
        _ => None,
    })?;
    let distance_norm = r.get_with("distance_norm", DistanceNorm::Squared, "squared", |s| {
        match s {
            "squared" => Some(DistanceNorm::Squared),
            "plain" => Some(DistanceNorm::Plain),
            _ => None,
        }
    })?;
    r.finish()?;
    Ok(PtqFileConfig {
        weight_bits,
        act_bits,
        iterations,
        fake_quant_tail,
        scale,
        lambda_dist,
        lr0,
        warmup,
        drop_prob,
        calib_batches,
        method,
        distance_norm,
    })
}

fn parse_merge(section: &Section, notices: &mut Vec<String>) -> Result<MergeConfig> {
    let mut r = Reader::new("merge", section, notices);
    let strategy = r.get_with(
        "strategy",
        MergeStrategy::NoiseSampled,
        "noise_sampled",
        parse_strategy,
    )?;
    let n_candidates = r.get("n_candidates", 30, parse_usize)?;
    let cosine = r.get_with("cosine", CosineMode::Symmetric, "symmetric", |s| match s {
        "symmetric" => Some(CosineMode::Symmetric),
        "one_sided" => Some(CosineMode::OneSided),
        _ => None,
    })?;
    r.finish()?;
    if n_candidates == 0 {
        return Err(CliError::Config("[merge] n_candidates must be positive".into()));
    }
    Ok(MergeConfig {
        strategy,
        n_candidates,
        cosine,
    })
}

pub fn parse_strategy(s: &str) -> Option<MergeStrategy> {
    match s {
        "fp_midpoint" => Some(MergeStrategy::FpMidpoint),
        "int_naive" => Some(MergeStrategy::IntNaive),
        "noise_sampled" => Some(MergeStrategy::NoiseSampled),
        _ => None,
    }
}

fn parse_analysis(section: &Section, notices: &mut Vec<String>) -> Result<AnalysisConfig> {
    let mut r = Reader::new("analysis", section, notices);
    let grid_n = r.get("grid_n", 21, parse_usize)?;
    let surface_nu = r.get("surface_nu", 25, parse_usize)?;
    let surface_nv = r.get("surface_nv", 25, parse_usize)?;
    let probes = r.get("probes", 32, parse_usize)?;
    let probe_h = r.get("probe_h", 1e-3, parse_f64)?;
    let extent_keys = [
        r.raw("u_min").map(str::to_string),
        r.raw("u_max").map(str::to_string),
        r.raw("v_min").map(str::to_string),
        r.raw("v_max").map(str::to_string),
    ];
    r.finish()?;
    let surface_extent = match extent_keys {
        [None, None, None, None] => None,
        [Some(a), Some(b), Some(c), Some(d)] => {
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|_| {
                    CliError::Config(format!("[analysis] cannot parse extent value `{s}`"))
                })
            };
            Some((parse(&a)?, parse(&b)?, parse(&c)?, parse(&d)?))
        }
        _ => {
            return Err(CliError::Config(
                "[analysis] set all of u_min, u_max, v_min, v_max or none".into(),
            ))
        }
    };
    Ok(AnalysisConfig {
        grid_n,
        surface_nu,
        surface_nv,
        probes,
        probe_h,
        surface_extent,
    })
}

/// A minimal complete config with every key defaulted, used by tests.
pub fn default_config_text() -> &'static str {
    "[data]\n[train]\n[ptq]\n[merge]\n[analysis]\n"
}
