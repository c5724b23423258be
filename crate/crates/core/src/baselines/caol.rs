use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::{conv_accumulate, kernel_grad_accumulate, soft_threshold, FilterBank};
use crate::error::{Error, Result};
use crate::tensor::ComplexVolume;

/// Hyperparameters of tight-frame convolutional filter pretraining.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CaolConfig {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "k_f")]
    pub kf: usize,
    /// `None` selects [`default_sparsity_alpha`].
    pub sparsity_alpha: Option<f64>,
    pub outer_iters: usize,
}

impl Default for CaolConfig {
    fn default() -> Self {
        Self {
            k: 27,
            kf: 3,
            sparsity_alpha: None,
            outer_iters: 20,
        }
    }
}

impl CaolConfig {
    pub fn validate(&self) -> Result<()> {
        let p = self.kf * self.kf * self.kf;
        if self.kf.is_multiple_of(2) || self.kf == 0 {
            return Err(Error::Config(format!("k_f must be odd, got {}", self.kf)));
        }
        // sum_k h_k h_k^T = I/P has rank P, which K filters can only reach when K >= P
        if self.k < p {
            return Err(Error::Config(format!(
                "tight-frame pretraining needs K >= k_f^3, got K={} k_f={}",
                self.k, self.kf
            )));
        }
        if let Some(a) = self.sparsity_alpha {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(Error::Config(format!("sparsity_alpha must be >= 0, got {a}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct CaolOutcome {
    pub filters: FilterBank,
    pub sparsity_alpha: f64,
    /// Objective after each round.
    pub objective: Vec<f64>,
}

impl CaolOutcome {
    pub fn objective_csv(&self) -> String {
        let mut s = String::from("round,objective\n");
        for (i, v) in self.objective.iter().enumerate() {
            let _ = writeln!(s, "{},{v:.17e}", i + 1);
        }
        s
    }

    pub fn write_objective_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.objective_csv())?;
        Ok(())
    }
}

/// Row-major `K x P` filter matrix.
type Frame = DMatrix<f64>;

/// Closest tight frame `F^T F = I/P` to `b` in the trace sense.
fn procrustes(b: &Frame) -> Result<Frame> {
    let p = b.ncols() as f64;
    let svd = b.clone().svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::NonFinite("singular value decomposition failed".into())),
    };
    let f = u * vt / p.sqrt();
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("filter update".into()));
    }
    Ok(f)
}

fn to_bank(f: &Frame, kf: usize) -> Result<FilterBank> {
    let flat = (0..f.nrows()).flat_map(|k| f.row(k).iter().copied().collect::<Vec<_>>()).collect();
    FilterBank::with_default_scalars(f.nrows(), kf, flat)
}

fn channels(volumes: &[ComplexVolume]) -> Vec<(crate::tensor::Shape, Vec<f64>)> {
    volumes
        .iter()
        .flat_map(|v| {
            let two = v.as_two_channel();
            (0..2).map(move |c| (v.shape(), two.channel(c).to_vec())).collect::<Vec<_>>()
        })
        .collect()
}

fn responses(u: &[f64], shape: crate::tensor::Shape, fb: &FilterBank) -> Vec<Vec<f64>> {
    (0..fb.n_filters())
        .map(|k| {
            let mut out = vec![0.0; u.len()];
            conv_accumulate(u, shape, fb.kernel(k), fb.kernel_side(), false, &mut out);
            out
        })
        .collect()
}

fn random_frame(k: usize, kf: usize, seed: u64) -> Result<Frame> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let p = kf * kf * kf;
    let g = Frame::from_fn(k, p, |_, _| StandardNormal.sample(&mut rng));
    procrustes(&g)
}

/// `0.01` times the median absolute response of the seeded initial filters.
pub fn default_sparsity_alpha(volumes: &[ComplexVolume], k: usize, kf: usize, seed: u64) -> Result<f64> {
    let fb = to_bank(&random_frame(k, kf, seed)?, kf)?;
    let mut all: Vec<f64> = channels(volumes)
        .par_iter()
        .map(|(shape, u)| responses(u, *shape, &fb).into_iter().flatten().map(f64::abs).collect::<Vec<_>>())
        .collect::<Vec<_>>()
        .concat();
    if all.is_empty() {
        return Err(Error::InvalidArgument("no training volumes".into()));
    }
    let mid = all.len() / 2;
    let (_, m, _) = all.select_nth_unstable_by(mid, f64::total_cmp);
    Ok(0.01 * *m)
}

/// Learns a tight frame of `K` filters on ground-truth volumes by
/// alternating exact soft-thresholding of the responses with an
/// orthogonal-factor filter update. Regularization scalars of the result
/// are left at their defaults.
pub fn caol_pretrain(volumes: &[ComplexVolume], cfg: &CaolConfig, seed: u64) -> Result<CaolOutcome> {
    cfg.validate()?;
    if volumes.is_empty() {
        return Err(Error::InvalidArgument("no training volumes".into()));
    }
    if volumes.iter().all(|v| v.max_abs() == 0.0) {
        return Err(Error::InvalidArgument("training volumes are all zero".into()));
    }
    let (k, kf) = (cfg.k, cfg.kf);
    let p = kf * kf * kf;
    let alpha = match cfg.sparsity_alpha {
        Some(a) => a,
        None => default_sparsity_alpha(volumes, k, kf, seed)?,
    };
    let data = channels(volumes);
    let mut f = random_frame(k, kf, seed)?;
    let mut objective = Vec::with_capacity(cfg.outer_iters);
    for _ in 0..cfg.outer_iters {
        let fb = to_bank(&f, kf)?;
        // sparse coding, then the correlation matrix B[k][q] = sum_p s_k(p) x(p - q)
        let parts: Vec<(Vec<f64>, Vec<Vec<f64>>)> = data
            .par_iter()
            .map(|(shape, u)| {
                let mut b = vec![0.0; k * p];
                let codes: Vec<Vec<f64>> = responses(u, *shape, &fb)
                    .into_iter()
                    .map(|r| r.into_iter().map(|v| soft_threshold(v, alpha).unwrap()).collect())
                    .collect();
                for (kk, s) in codes.iter().enumerate() {
                    kernel_grad_accumulate(u, s, *shape, kf, &mut b[kk * p..(kk + 1) * p]);
                }
                (b, codes)
            })
            .collect();
        let mut b = Frame::zeros(k, p);
        for (part, _) in &parts {
            b += Frame::from_row_slice(k, p, part);
        }
        f = procrustes(&b)?;
        let fb = to_bank(&f, kf)?;
        let obj: f64 = data
            .par_iter()
            .zip(&parts)
            .map(|((shape, u), (_, codes))| {
                responses(u, *shape, &fb)
                    .iter()
                    .zip(codes)
                    .map(|(r, s)| {
                        r.iter()
                            .zip(s)
                            .map(|(a, c)| 0.5 * (a - c) * (a - c) + alpha * c.abs())
                            .sum::<f64>()
                    })
                    .sum::<f64>()
            })
            .collect::<Vec<_>>()
            .into_iter()
            .sum();
        objective.push(obj);
    }
    Ok(CaolOutcome {
        filters: to_bank(&f, kf)?,
        sparsity_alpha: alpha,
        objective,
    })
}
