use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use spr_core::config::RunConfig;
use spr_core::denoiser::FilterBank;
use spr_core::metrics::{evaluate, export_pgm};
use spr_core::pipeline::{self, Method, RunManifest};
use spr_core::sim::Split;
use spr_core::{io, selftest, Error, Result};

#[derive(Parser)]
#[command(name = "spr", version, about = "Learned convolutional sparsity for dynamic MRI reconstruction")]
struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "SPR_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a train/val/test dataset.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Replace an existing non-empty output directory.
        #[arg(long)]
        overwrite: bool,
    },
    /// Pretrain tight-frame filters on the training ground truth.
    Pretrain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train filters and regularization weights end to end.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Start from a saved filter bank instead of a random one.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Train only alpha and lambda.
        #[arg(long)]
        freeze_filters: bool,
        /// Override the unroll depth used for training.
        #[arg(long = "T")]
        depth: Option<usize>,
    },
    /// Reconstruct one split of a dataset.
    Reconstruct {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = MethodArg::Network)]
        method: MethodArg,
        /// Filter bank for the network method.
        #[arg(long)]
        filters: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Override the unroll depth.
        #[arg(long = "T")]
        depth: Option<usize>,
    },
    /// Score reconstructions against reference volumes.
    Evaluate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        recon: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the ROI side fraction.
        #[arg(long)]
        roi: Option<f64>,
        /// Also write magnitude and error images of this frame as PGM.
        #[arg(long)]
        pgm_frame: Option<usize>,
    },
    /// Run the built-in consistency checks.
    Selftest,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Network,
    NufftAdjoint,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Json(_) => 2,
        Error::MissingInput(_) => 3,
        Error::NonFinite(_) | Error::CgBreakdown { .. } => 4,
        _ => 1,
    }
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingInput(path.to_path_buf()))
    }
}

fn load_filters(path: &Path) -> Result<FilterBank> {
    require(path)?;
    FilterBank::load(path)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let started = Instant::now();
    match cli.command {
        Command::GenData { config, out, overwrite } => {
            let cfg = RunConfig::load(config.as_deref())?;
            let m = pipeline::gen_data(&cfg, &out, overwrite)?;
            RunManifest::new("gen-data", &cfg, started, &[out.join("dataset.json")]).write(&out)?;
            println!(
                "wrote {} train, {} val, {} test records to {}",
                m.counts.train,
                m.counts.val,
                m.counts.test,
                out.display()
            );
        }
        Command::Pretrain { config, dataset, out } => {
            let cfg = RunConfig::load(config.as_deref())?;
            require(&dataset)?;
            let outcome = pipeline::pretrain(&cfg, &dataset)?;
            std::fs::create_dir_all(&out)?;
            let mut extra = serde_json::Map::new();
            extra.insert("sparsity_alpha".into(), outcome.sparsity_alpha.into());
            let filters = out.join("filters.spt");
            let csv = out.join("objective.csv");
            outcome.filters.save(&filters, Some(extra))?;
            io::write_atomic(&csv, outcome.objective_csv().as_bytes())?;
            RunManifest::new("pretrain", &cfg, started, &[filters, csv]).write(&out)?;
            if let Some(v) = outcome.objective.last() {
                println!("pretraining objective after {} rounds: {v:.6e}", outcome.objective.len());
            }
        }
        Command::Train {
            config,
            dataset,
            out,
            init,
            freeze_filters,
            depth,
        } => {
            let cfg = RunConfig::load(config.as_deref())?;
            require(&dataset)?;
            let init = init.as_deref().map(load_filters).transpose()?;
            let outcome = pipeline::train_network(&cfg, &dataset, init, freeze_filters, depth, |r| {
                eprintln!(
                    "epoch {:>3}  train {:.6e}  val {:.6e}  alpha {:.4e}  lambda {:.4e}",
                    r.epoch, r.train_loss, r.val_loss, r.alpha, r.lambda
                );
            })?;
            let outputs = pipeline::save_training(&out, &outcome)?;
            RunManifest::new("train", &cfg, started, &outputs).write(&out)?;
            if let Some(reason) = &outcome.aborted {
                eprintln!("training stopped early: {reason}");
            }
            println!("best epoch {}", outcome.best_epoch);
        }
        Command::Reconstruct {
            config,
            dataset,
            out,
            method,
            filters,
            split,
            depth,
        } => {
            let cfg = RunConfig::load(config.as_deref())?;
            require(&dataset)?;
            let method = match method {
                MethodArg::Network => Method::Network,
                MethodArg::NufftAdjoint => Method::NufftAdjoint,
            };
            let fb = filters.as_deref().map(load_filters).transpose()?;
            let outputs = pipeline::reconstruct_split(&cfg, &dataset, split.into(), method, fb.as_ref(), depth, &out)?;
            RunManifest::new("reconstruct", &cfg, started, &outputs).write(&out)?;
            println!("reconstructed {} records into {}", outputs.len(), out.display());
        }
        Command::Evaluate {
            config,
            recon,
            reference,
            out,
            roi,
            pgm_frame,
        } => {
            let cfg = RunConfig::load(config.as_deref())?;
            let roi = roi.unwrap_or(cfg.eval.roi_fraction);
            let report = evaluate(&recon, &reference, roi)?;
            report.write(&out)?;
            if let Some(t) = pgm_frame {
                let recon_files = spr_core::metrics::list_volumes(&recon)?;
                let reference_files = spr_core::metrics::list_volumes(&reference)?;
                for (id, path) in &recon_files {
                    let x = io::load_volume(path)?;
                    let r = io::load_volume(&reference_files[id])?;
                    export_pgm(&out.join("images"), id, &x, &r, t)?;
                }
            }
            RunManifest::new("evaluate", &cfg, started, &[out.join("metrics.csv"), out.join("metrics.json")])
                .write(&out)?;
            for name in ["psnr_db", "nrmse", "ssim", "uiq"] {
                let s = report.summary(name);
                println!("{name:>8}: mean {:.4} median {:.4}", s.mean, s.median);
            }
        }
        Command::Selftest => {
            let results = selftest::run_all();
            let failed = results.iter().filter(|(c, _)| !c.passed).count();
            for (c, secs) in &results {
                println!(
                    "{} {:<42} {} ({secs:.2}s)",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
            }
            if failed > 0 {
                return Err(Error::NonFinite(format!("{failed} self-test check(s) failed")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
