use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use flim_cli::commands::{self, load_splits};
use flim_cli::service::{serve, AppState};
use flim_cli::synth::{write_dataset, SynthParams};
use flim_cli::PipelineConfig;
use flim_core::fsutil::write_json;

#[derive(Parser)]
#[command(name = "flim", version, about = "Marker-driven 3D feature learning and CT classification")]
struct Cli {
    /// Pipeline config (JSON). Defaults to ./pipeline.json.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for batch work (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory; each command has its own default.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Resample, crop, resize and standardize the raw volumes.
    Preprocess,
    /// Write a synthetic labelled dataset with markers and a pipeline config.
    Synth {
        #[arg(long, default_value_t = 24)]
        n_normal: usize,
        #[arg(long, default_value_t = 24)]
        n_abnormal: usize,
        /// Volume size, one value per axis or a single value for all.
        #[arg(long, value_delimiter = ',', default_value = "64")]
        dims: Vec<usize>,
    },
    /// Write stratified patient-wise splits.
    Splits,
    /// Train kernels and SVM for every split, or one.
    Train {
        #[arg(long)]
        split: Option<usize>,
        #[command(flatten)]
        svm: SvmFlags,
    },
    /// Score every split's test set and print the metrics table.
    Eval,
    /// Write descriptors of every patient under one split's model.
    Extract {
        #[arg(long)]
        split: usize,
    },
    /// Run the HTTP session service for one split.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value_t = 0)]
        split: usize,
    },
}

#[derive(Args)]
struct SvmFlags {
    #[arg(long)]
    svm_c: Option<f64>,
    #[arg(long)]
    svm_tol: Option<f64>,
    #[arg(long)]
    svm_max_iters: Option<usize>,
}

impl Cli {
    fn config(&self) -> anyhow::Result<PipelineConfig> {
        let path = self.config.clone().unwrap_or_else(|| PathBuf::from("pipeline.json"));
        let mut cfg = PipelineConfig::load(&path)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

fn out_dir(cli: &Cli, default: &Path) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| default.to_path_buf())
}

fn run(cli: &Cli) -> anyhow::Result<bool> {
    match &cli.command {
        Command::Preprocess => {
            let cfg = cli.config()?;
            let out = out_dir(cli, cfg.data.parent().unwrap_or(Path::new(".")));
            let report = commands::preprocess(&cfg, &out)?;
            eprintln!("preprocessed {} volumes into {}", report.written.len(), out.display());
            for (id, err) in &report.failed {
                eprintln!("failed {id}: {err}");
            }
            Ok(report.failed.is_empty())
        }
        Command::Synth { n_normal, n_abnormal, dims } => {
            let dims = match dims.as_slice() {
                [d] => [*d; 3],
                [x, y, z] => [*x, *y, *z],
                _ => anyhow::bail!("--dims takes one or three values"),
            };
            let params = SynthParams { n_normal: *n_normal, n_abnormal: *n_abnormal, dims, seed: cli.seed.unwrap_or(0) };
            let out = out_dir(cli, Path::new("synth"));
            let manifest = write_dataset(&params, &out)?;
            eprintln!("wrote {} patients to {}", manifest.patients.len(), out.display());
            Ok(true)
        }
        Command::Splits => {
            let cfg = cli.config()?;
            let plans = commands::splits(&cfg)?;
            let path = cli.out.as_ref().map_or_else(|| cfg.splits.clone(), |d| d.join("splits.json"));
            write_json(&path, &plans)?;
            eprintln!("wrote {} splits to {}", plans.len(), path.display());
            Ok(true)
        }
        Command::Train { split, svm } => {
            let mut cfg = cli.config()?;
            if let Some(dir) = &cli.out {
                cfg.models = dir.clone();
            }
            cfg.svm.c = svm.svm_c.unwrap_or(cfg.svm.c);
            cfg.svm.tol = svm.svm_tol.unwrap_or(cfg.svm.tol);
            cfg.svm.max_iters = svm.svm_max_iters.unwrap_or(cfg.svm.max_iters);
            cfg.validate()?;
            let plans = load_splits(&cfg.splits)?;
            for r in commands::train(&cfg, &plans, *split)? {
                eprintln!(
                    "split {}: kernels {:?}, descriptor {}, validation acc {:.4} kappa {:.4}",
                    r.split, r.kernels_per_layer, r.descriptor_len, r.validation.accuracy, r.validation.kappa
                );
            }
            Ok(true)
        }
        Command::Eval => {
            let cfg = cli.config()?;
            let plans = load_splits(&cfg.splits)?;
            let summary = commands::eval(&cfg, &plans, &cfg.models)?;
            let path = out_dir(cli, &cfg.models).join("metrics.json");
            write_json(&path, &summary)?;
            print!("{}", summary.table());
            Ok(true)
        }
        Command::Extract { split } => {
            let cfg = cli.config()?;
            let rows = commands::extract(&cfg, *split)?;
            let path = out_dir(cli, &cfg.split_dir(*split)).join("descriptors.json");
            write_json(&path, &rows)?;
            eprintln!("wrote {} descriptors to {}", rows.len(), path.display());
            Ok(true)
        }
        Command::Serve { host, port, split } => {
            let cfg = cli.config()?;
            let state = AppState::from_config(&cfg, *split)?;
            let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
            rt.block_on(serve(state, host, *port))?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
