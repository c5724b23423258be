//! End-to-end steps behind the CLI commands: dataset generation,
//! pretraining, training, reconstruction and run manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::{caol_pretrain, CaolOutcome};
use crate::config::RunConfig;
use crate::denoiser::FilterBank;
use crate::error::{Error, Result};
use crate::io;
use crate::operators::pseudo_inverse;
use crate::sim::{load_split, make_dataset, DatasetManifest, Split};
use crate::solver::network_forward;
use crate::train::{train, EpochRecord, Sample, TrainOutcome};

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_sha256: String,
    pub seeds: BTreeMap<String, u64>,
    pub wall_time_s: f64,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &RunConfig, started: Instant, outputs: &[PathBuf]) -> Self {
        let seeds = [
            ("data", cfg.data.seed),
            ("model_init", cfg.model.init_seed),
            ("pretrain", cfg.pretrain.seed),
            ("train_shuffle", cfg.train.seed),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v))
        .collect();
        Self {
            command: command.to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            config_sha256: cfg.sha256(),
            seeds,
            wall_time_s: started.elapsed().as_secs_f64(),
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        io::write_json(&dir.join("run_manifest.json"), self)
    }
}

pub fn gen_data(cfg: &RunConfig, out: &Path, overwrite: bool) -> Result<DatasetManifest> {
    make_dataset(out, &cfg.data, overwrite)
}

/// Training pairs `(A# y, x_f)` of one split.
pub fn load_samples(dataset: &Path, split: Split) -> Result<Vec<Sample>> {
    load_split(dataset, split)?
        .into_iter()
        .map(|r| {
            let x0 = pseudo_inverse(&r.op, &r.y)?;
            Ok(Sample {
                id: r.manifest.record_id,
                op: Arc::new(r.op),
                y: r.y,
                x0,
                target: r.x_f,
            })
        })
        .collect()
}

/// Tight-frame pretraining on the ground truth of the training split.
pub fn pretrain(cfg: &RunConfig, dataset: &Path) -> Result<CaolOutcome> {
    let volumes: Vec<_> = load_split(dataset, Split::Train)?.into_iter().map(|r| r.x_f).collect();
    caol_pretrain(&volumes, &cfg.pretrain.caol(), cfg.pretrain.seed)
}

/// Seeded initialization of the end-to-end model.
pub fn initial_filters(cfg: &RunConfig) -> Result<FilterBank> {
    let mut fb = FilterBank::random(cfg.model.k, cfg.model.kf, cfg.model.init_seed)?;
    fb.set_smooth_b(cfg.model.smooth_b)?;
    Ok(fb)
}

/// Trains on the training split with best-epoch selection on the
/// validation split. `depth` overrides the configured unroll depth.
pub fn train_network(
    cfg: &RunConfig,
    dataset: &Path,
    init: Option<FilterBank>,
    freeze_filters: bool,
    depth: Option<usize>,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let train_set = load_samples(dataset, Split::Train)?;
    let val_set = load_samples(dataset, Split::Val)?;
    let fb0 = match init {
        Some(fb) => fb,
        None => initial_filters(cfg)?,
    };
    let mut net = cfg.model.network();
    if let Some(d) = depth {
        net.depth = d;
    }
    train(&train_set, &val_set, &fb0, &net, &cfg.train, freeze_filters, on_epoch)
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,alpha,lambda\n");
    for r in history {
        let _ = writeln!(
            s,
            "{},{:.17e},{:.17e},{:.17e},{:.17e}",
            r.epoch, r.train_loss, r.val_loss, r.alpha, r.lambda
        );
    }
    s
}

/// Writes `best.spt`, `last.spt` (with sidecars) and `history.csv`.
pub fn save_training(out: &Path, outcome: &TrainOutcome) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out)?;
    let mut extra = serde_json::Map::new();
    extra.insert("best_epoch".into(), outcome.best_epoch.into());
    if let Some(reason) = &outcome.aborted {
        extra.insert("aborted".into(), reason.clone().into());
    }
    let best = out.join("best.spt");
    let last = out.join("last.spt");
    let history = out.join("history.csv");
    outcome.best.save(&best, Some(extra))?;
    outcome.last.save(&last, None)?;
    io::write_atomic(&history, history_csv(&outcome.history).as_bytes())?;
    Ok(vec![best, last, history])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// The unrolled network with learned filters.
    Network,
    /// The density-compensated adjoint `A# y`.
    NufftAdjoint,
}

/// Reconstructs every record of `split` into `out/<record_id>.spt`.
pub fn reconstruct_split(
    cfg: &RunConfig,
    dataset: &Path,
    split: Split,
    method: Method,
    filters: Option<&FilterBank>,
    depth: Option<usize>,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let mut net = cfg.model.network();
    if let Some(d) = depth {
        net.depth = d;
    }
    let fb = match (method, filters) {
        (Method::Network, None) => return Err(Error::Config("network reconstruction needs filters".into())),
        (_, fb) => fb,
    };
    let records = load_split(dataset, split)?;
    std::fs::create_dir_all(out)?;
    records
        .par_iter()
        .map(|r| {
            let x0 = pseudo_inverse(&r.op, &r.y)?;
            let x = match method {
                Method::NufftAdjoint => x0,
                Method::Network => network_forward(&x0, &r.y, &r.op, fb.unwrap(), &net, false)?.0,
            };
            if !x.is_finite() {
                return Err(Error::NonFinite(format!("reconstruction of {}", r.manifest.record_id)));
            }
            let path = out.join(format!("{}.spt", r.manifest.record_id));
            io::save_volume(&path, &x)?;
            Ok(path)
        })
        .collect()
}
