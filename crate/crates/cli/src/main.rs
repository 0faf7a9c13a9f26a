use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use dion_core::commcost::{model_volume_report, write_report_csv, CommMethod, ShardedLayerShape};
use dion_core::diagnostics::DiagnosticsMode;
use dion_core::harness::{
    run_beta_sweep, run_experiment, run_invariant_suite, run_nu_trace, ExperimentConfig,
};
use dion_core::Error;

#[derive(Parser)]
#[command(name = "dion-bench", version, about = "Low-rank spectral optimizer benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_path` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Skip the SVD-based diagnostics.
    #[arg(long)]
    fast_diagnostics: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run(RunArgs),
    /// One run per β; prints the sweep table as JSON.
    SweepBeta {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.1, 0.3, 0.5, 1.0])]
        betas: Vec<f64>,
    },
    /// ν time series for Dion and Orth-Dion at each rank.
    TraceNu {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_values_t = vec![1, 4, 8])]
        ranks: Vec<usize>,
    },
    /// Per-step optimizer communication volume as CSV.
    Commcost {
        /// JSON list of layers; when absent a single layer is built from the flags.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 768)]
        m: usize,
        #[arg(long, default_value_t = 2048)]
        n: usize,
        #[arg(long, default_value_t = 192)]
        rank: usize,
        #[arg(long, default_value_t = 2)]
        dtype_bytes: usize,
        #[arg(long, default_value_t = 8)]
        world_size: usize,
        /// Add the base weight/gradient collectives to every row.
        #[arg(long)]
        include_base: bool,
    },
    /// Run the invariant suite.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        trials: usize,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerEntry {
    name: String,
    m: usize,
    n: usize,
    rank: usize,
    dtype_bytes: usize,
    world_size: usize,
    method: CommMethod,
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_path(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.fast_diagnostics {
        cfg.diagnostics_mode = DiagnosticsMode::Fast;
    }
    if let Some(out) = &args.out {
        cfg.output_path = Some(out.to_string_lossy().into_owned());
    }
    Ok(cfg)
}

fn write_json(out: Option<&Path>, file: &str, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(file), text)?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let cfg = load_config(&args)?;
            let log = run_experiment(&cfg)?;
            let s = &log.summary;
            println!(
                "{} steps={} min_kyfan_grad={} mean_nu={} final_r_ratio={} final_rank={}",
                cfg.algorithm.name(),
                log.records.len(),
                s.min_kyfan_grad.unwrap_or(f64::NAN),
                s.mean_nu,
                s.final_r_ratio,
                s.final_rank
            );
        }
        Command::SweepBeta { run, betas } => {
            let mut cfg = load_config(&run)?;
            cfg.output_path = None;
            let table = run_beta_sweep(&cfg, &betas)?;
            write_json(run.out.as_deref(), "beta_sweep.json", &table)?;
        }
        Command::TraceNu { run, ranks } => {
            let mut cfg = load_config(&run)?;
            cfg.output_path = None;
            let trace = run_nu_trace(&cfg, &ranks)?;
            write_json(run.out.as_deref(), "nu_trace.json", &trace)?;
        }
        Command::Commcost {
            config,
            out,
            m,
            n,
            rank,
            dtype_bytes,
            world_size,
            include_base,
        } => {
            let layers: Vec<(String, ShardedLayerShape, CommMethod)> = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    let entries: Vec<LayerEntry> = serde_json::from_str(&text)
                        .map_err(|e| Error::config("layers", e.to_string()))?;
                    entries
                        .into_iter()
                        .map(|e| {
                            let shape =
                                ShardedLayerShape::new(e.m, e.n, e.rank, e.dtype_bytes, e.world_size)?;
                            Ok((e.name, shape, e.method))
                        })
                        .collect::<dion_core::Result<_>>()?
                }
                None => {
                    let shape = ShardedLayerShape::new(m, n, rank, dtype_bytes, world_size)?;
                    vec![
                        ("layer".to_string(), shape, CommMethod::Lowrank),
                        ("layer".to_string(), shape, CommMethod::FullrankExtra),
                    ]
                }
            };
            let report = model_volume_report(&layers, include_base)?;
            match out {
                Some(path) => write_report_csv(&report, std::fs::File::create(path)?)?,
                None => write_report_csv(&report, std::io::stdout().lock())?,
            }
        }
        Command::Check { seed, trials } => {
            let results = run_invariant_suite(seed, trials)?;
            let mut stdout = std::io::stdout().lock();
            let mut failed = 0;
            for r in &results {
                let tag = if r.passed { "PASS" } else { "FAIL" };
                writeln!(stdout, "{tag} {} ({})", r.name, r.detail)?;
                failed += usize::from(!r.passed);
            }
            if failed > 0 {
                return Err(Error::Validation(format!("{failed} invariant check(s) failed")).into());
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::NumericalAbort { .. }) => 3,
        Some(_) => 2,
        None if err.downcast_ref::<serde_json::Error>().is_some() => 2,
        None if err.downcast_ref::<std::io::Error>().is_some() => 2,
        None => 1,
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
