//! `ccc`: preprocessing, splits, evaluation, phenotyping and the annotation
//! server for circulating cell cluster datasets.
//!
//! Reports go to stdout as JSON, human-readable tables to stderr.
//! Exit status: 0 success, 1 data or runtime error, 2 usage error.

mod commands;
mod config;

use std::fmt;
use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use ccc_annotate::{AnnotationService, ClassicalProposer, ServiceConfig};
use ccc_core::dataset::Manifest;
use ccc_core::synth::{DatasetOptions, DEFAULT_CANVAS, DEFAULT_NOISE_SIGMA};

use commands::{MaskSource, Output, SynthPreset};
use config::{FileConfig, Overrides, PipelineConfig};

/// Bad arguments or configuration; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "ccc", version, about = "Circulating cell cluster analysis")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "CCC_CONFIG")]
    config: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overlap threshold for a valid stain.
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Lower HSV brightness bound for stain extraction.
    #[arg(long = "v-x", global = true)]
    v_x: Option<u8>,
    /// Number of cross-validation folds.
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// classical, gt, stub[:label[:score]] or onnx:PATH.
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Also write the report to this file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// More log output; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pad to square and resize every image in a directory.
    Preprocess { input: PathBuf, output: Option<PathBuf> },
    /// Write five augmented variants of every image in a directory.
    Augment { input: PathBuf, output: Option<PathBuf> },
    /// Stratified k-fold assignment, or a 4:1 train/test split.
    Split {
        manifest: Option<PathBuf>,
        #[arg(long)]
        holdout: bool,
    },
    /// Cluster classification under k-fold cross-validation.
    Crossval { manifest: Option<PathBuf> },
    /// Instance-segmentation average precision.
    Segeval { manifest: Option<PathBuf> },
    /// Phenotype every cluster record; one JSON line each plus a summary.
    Phenotype {
        manifest: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "auto")]
        masks: MaskSource,
    },
    /// Phenotype accuracy over the threshold grid.
    Sweep {
        manifest: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Generate a synthetic dataset.
    Synth {
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        per_category: usize,
        #[arg(long, value_enum, default_value = "categories")]
        preset: SynthPreset,
        /// Share of clusters with stain outside the cluster.
        #[arg(long, default_value_t = 0.0)]
        artifact_rate: f64,
        #[arg(long, default_value_t = DEFAULT_NOISE_SIGMA)]
        noise_sigma: f64,
        #[arg(long, default_value_t = DEFAULT_CANVAS)]
        canvas: u32,
    },
    /// Serve the annotation API.
    Serve {
        manifest: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long)]
        journal: Option<PathBuf>,
        #[arg(long)]
        labels_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

/// `Ok(false)` when the command finished but some inputs failed.
fn run(cli: Cli) -> Result<bool> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let flags = Overrides {
        tau: cli.tau,
        v_x: cli.v_x,
        k: cli.k,
        seed: cli.seed,
        backend: cli.backend.clone(),
        threads: cli.threads,
    };
    let cfg = PipelineConfig::resolve(file, &flags)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build_global()
        .context("starting worker threads")?;
    log::debug!("configuration: {}", serde_json::to_string(&cfg)?);

    let output = match cli.command {
        Command::Preprocess { input, output } => commands::preprocess(&input, &cfg.output_dir(output)?)?,
        Command::Augment { input, output } => commands::augment(&input, &cfg.output_dir(output)?, &cfg)?,
        Command::Split { manifest, holdout } => commands::split(&cfg.manifest_path(manifest)?, holdout, &cfg)?,
        Command::Crossval { manifest } => commands::crossval(&cfg.manifest_path(manifest)?, &cfg)?,
        Command::Segeval { manifest } => commands::segeval(&cfg.manifest_path(manifest)?, &cfg)?,
        Command::Phenotype { manifest, masks } => commands::phenotype(&cfg.manifest_path(manifest)?, masks, &cfg)?,
        Command::Sweep { manifest, csv } => commands::sweep(&cfg.manifest_path(manifest)?, csv.as_deref(), &cfg)?,
        Command::Synth { output, per_category, preset, artifact_rate, noise_sigma, canvas } => {
            if !(0.0..=1.0).contains(&artifact_rate) || noise_sigma < 0.0 || canvas < 32 {
                return Err(UsageError("artifact rate in [0, 1], noise sigma >= 0, canvas >= 32".into()).into());
            }
            let opts = DatasetOptions { canvas, noise_sigma, artifact_rate, ..Default::default() };
            commands::synth(&cfg.output_dir(output)?, per_category, preset, &opts, cfg.seed)?
        }
        Command::Serve { manifest, addr, journal, labels_dir } => {
            let path = cfg.manifest_path(manifest)?;
            let m = Manifest::load(&path).with_context(|| format!("loading manifest {}", path.display()))?;
            let service = AnnotationService::open(
                m,
                ServiceConfig { journal, labels_dir },
                Box::new(ClassicalProposer::default()),
            )?;
            log::info!("{} annotation tasks", service.len());
            eprintln!("listening on http://{addr}");
            tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()?
                .block_on(ccc_annotate::serve(Arc::new(service), addr))
                .with_context(|| format!("serving on {addr}"))?;
            return Ok(true);
        }
    };
    emit(&output, cli.out.as_deref())?;
    Ok(!output.partial_failure)
}

fn emit(output: &Output, out: Option<&std::path::Path>) -> Result<()> {
    eprint!("{}", output.table);
    let mut stdout = std::io::stdout().lock();
    stdout.write_all(output.stdout.as_bytes())?;
    stdout.flush()?;
    if let Some(path) = out {
        ccc_core::dataset::write_atomic(path, output.stdout.as_bytes())?;
    }
    Ok(())
}
