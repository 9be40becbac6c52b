use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mergeq_cli::commands;
use mergeq_cli::config::{load_config, parse_strategy};
use mergeq_cli::error::{CliError, Result};
use mergeq_cli::pipeline::Lab;

/// Desk-scale laboratory for merge-friendly post-training quantization:
/// train a source model, adapt it per target domain, quantize by
/// noise-based reconstruction, merge the quantized targets, and measure
/// error barriers and loss surfaces.
#[derive(Parser)]
#[command(name = "mergeq", version, about)]
struct Cli {
    /// Experiment configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; every stage derives its own stream from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Output path (file or directory, command dependent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for merge candidate scoring.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    /// Allow merging checkpoints that trace to different sources.
    #[arg(long, global = true, default_value_t = false)]
    allow_mixed_source: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write every configured domain as CSV files.
    GenData,
    /// Train the source model and write its checkpoint.
    Train,
    /// Fine-tune a source checkpoint on one target domain.
    Adapt {
        source: PathBuf,
        #[arg(long)]
        domain: usize,
    },
    /// Quantize an adapted checkpoint by reconstruction.
    Quantize {
        adapted: PathBuf,
        source: PathBuf,
        #[arg(long)]
        domain: usize,
    },
    /// Merge two or more checkpoints and evaluate per target domain.
    Merge {
        ckpts: Vec<PathBuf>,
        /// fp_midpoint | int_naive | noise_sampled (default from config).
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Accuracy of a checkpoint on one domain's test split.
    Eval {
        ckpt: PathBuf,
        #[arg(long)]
        domain: usize,
    },
    /// Losses along the interpolation path between two checkpoints.
    Barrier {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        domain: usize,
    },
    /// Loss surface over the plane spanned by three checkpoints.
    Surface {
        origin: PathBuf,
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        domain: usize,
    },
    /// Merge-stability comparison across seeds (violin-plot data).
    Report {
        ckpts: Vec<PathBuf>,
        #[arg(long, default_value_t = 20)]
        seeds: usize,
    },
}

fn required_out(out: &Option<PathBuf>) -> Result<&PathBuf> {
    out.as_ref()
        .ok_or_else(|| CliError::Config("this command needs --out".into()))
}

fn run(cli: Cli) -> Result<()> {
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let loaded = load_config(config_path)?;
    for notice in &loaded.notices {
        eprintln!("{notice}");
    }
    let lab = Lab::new(&loaded.config, cli.seed);

    match &cli.command {
        Command::GenData => {
            commands::cmd_gen_data(&lab, required_out(&cli.out)?)?;
        }
        Command::Train => {
            commands::cmd_train(&lab, required_out(&cli.out)?)?;
        }
        Command::Adapt { source, domain } => {
            commands::cmd_adapt(&lab, source, *domain, required_out(&cli.out)?)?;
        }
        Command::Quantize {
            adapted,
            source,
            domain,
        } => {
            commands::cmd_quantize(&lab, adapted, source, *domain, required_out(&cli.out)?)?;
        }
        Command::Merge { ckpts, strategy } => {
            let strategy = match strategy {
                Some(name) => parse_strategy(name).ok_or_else(|| {
                    CliError::Config(format!("unknown merge strategy `{name}`"))
                })?,
                None => loaded.config.merge.strategy,
            };
            commands::cmd_merge(
                &lab,
                ckpts,
                strategy,
                required_out(&cli.out)?,
                cli.allow_mixed_source,
                cli.jobs,
            )?;
        }
        Command::Eval { ckpt, domain } => {
            commands::cmd_eval(&lab, ckpt, *domain, cli.out.as_deref())?;
        }
        Command::Barrier { a, b, domain } => {
            commands::cmd_barrier(&lab, a, b, *domain, required_out(&cli.out)?)?;
        }
        Command::Surface {
            origin,
            a,
            b,
            domain,
        } => {
            commands::cmd_surface(&lab, origin, a, b, *domain, required_out(&cli.out)?)?;
        }
        Command::Report { ckpts, seeds } => {
            commands::cmd_report(&lab, ckpts, *seeds, required_out(&cli.out)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
