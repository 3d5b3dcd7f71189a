use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use monopair_cli::{cmd_eval, cmd_optimize, cmd_pairs, cmd_synth, CliError, Outcome, RunConfig};

#[derive(Parser)]
#[command(
    name = "monopair",
    version,
    about = "Pairwise-constraint post-optimization for monocular 3D detection"
)]
struct Cli {
    /// `key = value` run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of a synthetic spec.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Backbone downsampling factor.
    #[arg(long, global = true)]
    downsample: Option<u32>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count objects, effective pairs and paired objects per class.
    Pairs {
        labels_dir: PathBuf,
        calib_dir: PathBuf,
        /// Where per-image pair files and the report go.
        out_dir: Option<PathBuf>,
        /// Only the ids listed in this file.
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Refine prediction files and write KITTI labels.
    Optimize {
        pred_dir: PathBuf,
        calib_dir: PathBuf,
        out_dir: PathBuf,
    },
    /// KITTI-style AP/AOS evaluation.
    Eval {
        gt_dir: PathBuf,
        det_dir: PathBuf,
        /// Machine-readable metrics; defaults to `metrics.report` in det_dir.
        metrics_file: Option<PathBuf>,
    },
    /// Run a synthetic experiment; succeeds iff its gate passes.
    Synth {
        spec_file: PathBuf,
        /// Report and replayable per-trial dump.
        out_dir: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.clone(),
                source,
            })?;
            RunConfig::parse(&text).map_err(|source| CliError::Input {
                path: path.clone(),
                source,
            })?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    if let Some(jobs) = cli.jobs {
        cfg.jobs = jobs;
    }
    if let Some(s) = cli.downsample {
        cfg.downsample = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli, cfg: &RunConfig) -> Result<Outcome, CliError> {
    match &cli.command {
        Command::Pairs {
            labels_dir,
            calib_dir,
            out_dir,
            split,
        } => cmd_pairs(
            labels_dir,
            calib_dir,
            out_dir.as_deref(),
            split.as_deref(),
            cfg,
        )
        .map(|(o, _)| o),
        Command::Optimize {
            pred_dir,
            calib_dir,
            out_dir,
        } => cmd_optimize(pred_dir, calib_dir, out_dir, cfg),
        Command::Eval {
            gt_dir,
            det_dir,
            metrics_file,
        } => {
            let metrics = metrics_file
                .clone()
                .unwrap_or_else(|| det_dir.join("metrics.report"));
            cmd_eval(gt_dir, det_dir, &metrics, cfg)
        }
        Command::Synth { spec_file, out_dir } => {
            cmd_synth(spec_file, out_dir.as_deref().map(Path::new), cfg).map(|(o, _)| o)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = load_config(&cli).and_then(|cfg| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| CliError::Config(monopair::Error::InvalidInput(format!("jobs: {e}"))))?
            .install(|| run(&cli, &cfg))
    });
    match result {
        Ok(outcome) => {
            print!("{}", outcome.stdout);
            for e in &outcome.errors {
                log::error!("{e}");
            }
            ExitCode::from(outcome.status.code() as u8)
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.status().code() as u8)
        }
    }
}
