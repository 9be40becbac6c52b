//! Path-level command implementations shared by `main` and the tests.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mergeq_core::analysis::{self, SurfaceExtent};
use mergeq_core::hdrq::PtqMethod;
use mergeq_core::merge::{self, CosineMode, MergeStrategy};
use mergeq_core::rng::seed_stream;
use mergeq_core::synthdata;
use mergeq_core::Prng;

use crate::checkpoint::{load_checkpoint, save_checkpoint, LoadedCheckpoint, Model};
use crate::error::{CliError, Result};
use crate::pipeline::{barrier_between, fp_mean_network, noise_sampled_with_jobs, Lab};

/// Write a text file atomically (temp + rename), LF line endings.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Generate every configured domain as CSV files under `out_dir`.
pub fn cmd_gen_data(lab: &Lab<'_>, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for idx in 0..=lab.num_targets() {
        let d = lab.domain(idx)?;
        for (split, batch) in [("train", &d.train), ("test", &d.test)] {
            let path = out_dir.join(format!("domain{idx}_{split}.csv"));
            write_atomic(&path, &synthdata::to_csv(batch))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Train the source model and write its checkpoint.
pub fn cmd_train(lab: &Lab<'_>, out: &Path) -> Result<f64> {
    let (net, acc) = lab.train_source()?;
    save_checkpoint(out, &Model::Float(net), 0)?;
    println!("train: wrote {} (source test accuracy {acc})", out.display());
    Ok(acc)
}

/// Fine-tune a source checkpoint on one target domain.
pub fn cmd_adapt(lab: &Lab<'_>, source_path: &Path, domain: usize, out: &Path) -> Result<f64> {
    let source = load_checkpoint(source_path)?;
    let source_net = match &source.model {
        Model::Float(net) => net.clone(),
        Model::Quantized(_) => {
            return Err(CliError::Format(
                "adaptation needs a full-precision source checkpoint".into(),
            ))
        }
    };
    let (adapted, distance) = lab.adapt(&source_net, domain)?;
    let acc = lab.eval_model(&Model::Float(adapted.clone()), domain)?;
    save_checkpoint(out, &Model::Float(adapted), source.content_hash)?;
    println!(
        "adapt: wrote {} (domain {domain} accuracy {acc}, distance to source {distance})",
        out.display()
    );
    Ok(distance)
}

/// Quantize an adapted checkpoint via reconstruction; also writes the
/// loss trace as `<out>.trace.csv`.
pub fn cmd_quantize(
    lab: &Lab<'_>,
    adapted_path: &Path,
    source_path: &Path,
    domain: usize,
    out: &Path,
) -> Result<()> {
    let adapted = load_checkpoint(adapted_path)?;
    let source = load_checkpoint(source_path)?;
    let adapted_net = adapted.model.to_network()?;
    let source_net = match &source.model {
        Model::Float(net) => net.clone(),
        Model::Quantized(_) => {
            return Err(CliError::Format(
                "the distance anchor must be a full-precision source checkpoint".into(),
            ))
        }
    };
    if !adapted_net.same_architecture(&source_net) {
        return Err(CliError::Core(mergeq_core::Error::Shape(
            "adapted and source checkpoints have different architectures".into(),
        )));
    }
    if adapted.source_hash != 0 && adapted.source_hash != source.content_hash {
        eprintln!(
            "warning: adapted checkpoint was derived from a different source (hash mismatch)"
        );
    }

    let result = lab.quantize(&adapted_net, &source_net, domain)?;
    save_checkpoint(out, &Model::Quantized(result.quantized.clone()), source.content_hash)?;

    let mut trace = String::from("iter,loss,lr,phase\n");
    for (i, (&loss, &lr)) in result.loss_trace.iter().zip(&result.lr_trace).enumerate() {
        let phase = if lab.cfg.ptq.method == PtqMethod::Hdrq && i < result.tail_start {
            "noise"
        } else {
            "fake_quant"
        };
        let _ = writeln!(trace, "{i},{loss},{lr},{phase}");
    }
    let trace_path = PathBuf::from(format!("{}.trace.csv", out.display()));
    write_atomic(&trace_path, &trace)?;

    println!(
        "quantize: wrote {} (final calibration loss {}, distance to source {})",
        out.display(),
        result.final_loss,
        result.distance_to_source
    );
    Ok(())
}

fn check_provenance(loaded: &[LoadedCheckpoint], allow_mixed: bool) -> Result<u64> {
    let first = loaded[0].source_hash;
    if loaded.iter().all(|c| c.source_hash == first) {
        Ok(first)
    } else if allow_mixed {
        Ok(0)
    } else {
        Err(CliError::Format(
            "checkpoints derive from different sources; pass --allow-mixed-source to override"
                .into(),
        ))
    }
}

/// Merge two or more checkpoints, evaluate per target domain, and write
/// the merged checkpoint plus `<out>.report.csv`.
pub fn cmd_merge(
    lab: &Lab<'_>,
    paths: &[PathBuf],
    strategy: MergeStrategy,
    out: &Path,
    allow_mixed: bool,
    jobs: usize,
) -> Result<f64> {
    if paths.len() < 2 {
        return Err(CliError::Config("merging needs at least two checkpoints".into()));
    }
    let loaded: Vec<LoadedCheckpoint> =
        paths.iter().map(|p| load_checkpoint(p)).collect::<Result<_>>()?;
    let shared_hash = check_provenance(&loaded, allow_mixed)?;

    let mut report_rows = String::new();
    let merged_model: Model;
    let mut scores: Vec<f64> = Vec::new();
    let mut chosen_note = String::new();

    match strategy {
        MergeStrategy::FpMidpoint => {
            let nets = loaded
                .iter()
                .map(|c| c.model.to_network().map_err(CliError::from))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e)?;
            merged_model = Model::Float(fp_mean_network(&nets)?);
        }
        MergeStrategy::IntNaive | MergeStrategy::NoiseSampled => {
            let quantized: Vec<&mergeq_core::quant::QuantizedNet> = loaded
                .iter()
                .map(|c| {
                    c.model.as_quantized().ok_or_else(|| {
                        CliError::Format(format!(
                            "{} strategy needs quantized checkpoints",
                            strategy.name()
                        ))
                    })
                })
                .collect::<Result<_>>()?;
            if strategy == MergeStrategy::IntNaive {
                let candidate = merge::merge_int_naive_multi(&quantized)?;
                let _ = writeln!(chosen_note, "chosen_score,{}", candidate.score);
                merged_model = Model::Quantized(candidate.quantized);
            } else {
                let report = lab.noise_sampled_merge(
                    &quantized,
                    lab.cfg.merge.n_candidates,
                    lab.cfg.merge.cosine,
                    jobs,
                )?;
                scores = report.all_scores.clone();
                let _ = writeln!(chosen_note, "chosen_index,{}", report.chosen.seed);
                let _ = writeln!(chosen_note, "chosen_score,{}", report.chosen.score);
                merged_model = Model::Quantized(report.chosen.quantized);
            }
        }
    }

    let metrics = lab.target_metrics(&merged_model)?;
    let hmean = merge::harmonic_mean(
        &metrics.iter().map(|m| m.accuracy).collect::<Vec<_>>(),
    )?;

    save_checkpoint(out, &merged_model, shared_hash)?;

    let _ = writeln!(report_rows, "key,value");
    let _ = writeln!(report_rows, "strategy,{}", strategy.name());
    let _ = writeln!(report_rows, "inputs,{}", paths.len());
    report_rows.push_str(&chosen_note);
    let _ = writeln!(report_rows, "harmonic_mean,{hmean}");
    let _ = writeln!(report_rows);
    let _ = writeln!(report_rows, "domain,accuracy");
    for m in &metrics {
        let _ = writeln!(report_rows, "{},{}", m.domain, m.accuracy);
    }
    if !scores.is_empty() {
        let _ = writeln!(report_rows);
        let _ = writeln!(report_rows, "candidate,score");
        for (i, s) in scores.iter().enumerate() {
            let _ = writeln!(report_rows, "{i},{s}");
        }
    }
    let report_path = PathBuf::from(format!("{}.report.csv", out.display()));
    write_atomic(&report_path, &report_rows)?;

    println!(
        "merge: wrote {} (strategy {}, harmonic mean {hmean})",
        out.display(),
        strategy.name()
    );
    Ok(hmean)
}

/// Evaluate a checkpoint on one domain's test split.
pub fn cmd_eval(lab: &Lab<'_>, ckpt: &Path, domain: usize, out: Option<&Path>) -> Result<f64> {
    let loaded = load_checkpoint(ckpt)?;
    let acc = lab.eval_model(&loaded.model, domain)?;
    println!("eval: domain {domain} accuracy {acc}");
    if let Some(path) = out {
        write_atomic(path, &format!("domain,accuracy\n{domain},{acc}\n"))?;
    }
    Ok(acc)
}

/// Loss along the interpolation path between two checkpoints; writes
/// `lambda,loss` CSV and prints the barrier.
pub fn cmd_barrier(
    lab: &Lab<'_>,
    a: &Path,
    b: &Path,
    domain: usize,
    out: &Path,
) -> Result<f64> {
    let ca = load_checkpoint(a)?;
    let cb = load_checkpoint(b)?;
    let report = barrier_between(lab, &ca.model, &cb.model, domain, lab.cfg.analysis.grid_n)?;
    let mut csv = String::from("lambda,loss\n");
    for (lam, loss) in report.lambdas.iter().zip(&report.losses) {
        let _ = writeln!(csv, "{lam},{loss}");
    }
    write_atomic(out, &csv)?;
    println!(
        "barrier: {} (endpoints {} / {}, domain {domain})",
        report.barrier, report.endpoint_losses.0, report.endpoint_losses.1
    );
    Ok(report.barrier)
}

/// Loss surface over the plane spanned by three checkpoints; writes
/// `u,v,loss` CSV (row-major) and prints the grid extrema.
pub fn cmd_surface(
    lab: &Lab<'_>,
    origin: &Path,
    a: &Path,
    b: &Path,
    domain: usize,
    out: &Path,
) -> Result<()> {
    let origin_net = load_checkpoint(origin)?.model.to_network()?;
    let net_a = load_checkpoint(a)?.model.to_network()?;
    let net_b = load_checkpoint(b)?.model.to_network()?;
    let d = lab.domain(domain)?;
    let cfg = &lab.cfg.analysis;

    let extent = match cfg.surface_extent {
        Some((u_min, u_max, v_min, v_max)) => SurfaceExtent {
            u: (u_min, u_max),
            v: (v_min, v_max),
        },
        None => auto_extent(&origin_net, &net_a, &net_b)?,
    };
    let grid = analysis::surface_grid(
        &origin_net,
        &net_a,
        &net_b,
        &d.test,
        (cfg.surface_nu, cfg.surface_nv),
        extent,
    )?;

    let mut csv = String::from("u,v,loss\n");
    for iu in 0..cfg.surface_nu {
        for iv in 0..cfg.surface_nv {
            let (u, v) = grid.coords_at(iu, iv);
            let _ = writeln!(csv, "{u},{v},{}", grid.value_at(iu, iv));
        }
    }
    write_atomic(out, &csv)?;

    let lo = grid.grid.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = grid.grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    println!(
        "surface: {}x{} grid over u {:?} v {:?}, loss range [{lo}, {hi}]",
        cfg.surface_nu, cfg.surface_nv, extent.u, extent.v
    );
    Ok(())
}

/// Window covering the origin and both models with a 40% margin.
fn auto_extent(
    origin: &mergeq_core::Network,
    a: &mergeq_core::Network,
    b: &mergeq_core::Network,
) -> Result<SurfaceExtent> {
    let (e1, e2) = analysis::gram_schmidt_basis(origin, a, b)?;
    let o = origin.flat_params();
    let coords = |net: &mergeq_core::Network| -> (f64, f64) {
        let d: Vec<f64> = net
            .flat_params()
            .iter()
            .zip(&o)
            .map(|(&p, &q)| p - q)
            .collect();
        let u: f64 = d.iter().zip(&e1).map(|(&x, &y)| x * y).sum();
        let v: f64 = d.iter().zip(&e2).map(|(&x, &y)| x * y).sum();
        (u, v)
    };
    let pts = [(0.0, 0.0), coords(a), coords(b)];
    let (mut u_lo, mut u_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut v_lo, mut v_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (u, v) in pts {
        u_lo = u_lo.min(u);
        u_hi = u_hi.max(u);
        v_lo = v_lo.min(v);
        v_hi = v_hi.max(v);
    }
    let pad = |lo: f64, hi: f64| {
        let span = (hi - lo).max(1e-6);
        (lo - 0.4 * span, hi + 0.4 * span)
    };
    Ok(SurfaceExtent {
        u: pad(u_lo, u_hi),
        v: pad(v_lo, v_hi),
    })
}

/// Multi-seed merge comparison: noise-sampled selection versus a single
/// random sample, exported as `seed,score,hmean` rows per strategy.
pub fn cmd_report(
    lab: &Lab<'_>,
    paths: &[PathBuf],
    seeds: usize,
    out_dir: &Path,
) -> Result<()> {
    if paths.len() < 2 {
        return Err(CliError::Config("report needs at least two checkpoints".into()));
    }
    let loaded: Vec<LoadedCheckpoint> =
        paths.iter().map(|p| load_checkpoint(p)).collect::<Result<_>>()?;
    let quantized: Vec<&mergeq_core::quant::QuantizedNet> = loaded
        .iter()
        .map(|c| {
            c.model
                .as_quantized()
                .ok_or_else(|| CliError::Format("report needs quantized checkpoints".into()))
        })
        .collect::<Result<_>>()?;
    std::fs::create_dir_all(out_dir)?;

    let mut selected = String::from("seed,score,hmean\n");
    let mut single = String::from("seed,score,hmean\n");
    for s in 0..seeds {
        let base = seed_stream(lab.master_seed, &format!("report/noise_sampled/{s}"));
        let report = noise_sampled_with_jobs(
            &quantized,
            lab.cfg.merge.n_candidates,
            base,
            lab.cfg.merge.cosine,
            1,
        )?;
        let metrics = lab.target_metrics(&Model::Quantized(report.chosen.quantized.clone()))?;
        let hmean = merge::harmonic_mean(
            &metrics.iter().map(|m| m.accuracy).collect::<Vec<_>>(),
        )?;
        let _ = writeln!(selected, "{s},{},{hmean}", report.chosen.score);

        let mut rng = Prng::derived(lab.master_seed, &format!("report/single/{s}"));
        let candidate =
            merge::sample_merge_candidate(&quantized, &mut rng, CosineMode::Symmetric)?;
        let metrics =
            lab.target_metrics(&Model::Quantized(candidate.quantized.clone()))?;
        let hmean = merge::harmonic_mean(
            &metrics.iter().map(|m| m.accuracy).collect::<Vec<_>>(),
        )?;
        let _ = writeln!(single, "{s},{},{hmean}", candidate.score);
    }

    write_atomic(&out_dir.join("violin_noise_sampled.csv"), &selected)?;
    write_atomic(&out_dir.join("violin_single_sample.csv"), &single)?;
    println!(
        "report: wrote score distributions for {seeds} seeds to {}",
        out_dir.display()
    );
    Ok(())
}
