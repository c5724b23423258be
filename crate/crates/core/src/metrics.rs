//! Image-quality metrics on magnitude images and dataset-level evaluation
//! reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{shape_mismatch, Error, Result};
use crate::io;
use crate::tensor::{ComplexVolume, Shape};

/// Central `floor(f nx) x floor(f ny)` crop of every frame. The crop keeps
/// pixel `(nx/2, ny/2)` at its own center, so nested crops compose.
pub fn central_roi(x: &ComplexVolume, fraction: f64) -> Result<ComplexVolume> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("ROI fraction must lie in (0, 1], got {fraction}")));
    }
    let s = x.shape();
    let (mx, my) = ((fraction * s.nx as f64).floor() as usize, (fraction * s.ny as f64).floor() as usize);
    if mx == 0 || my == 0 {
        return Err(Error::InvalidArgument(format!(
            "ROI fraction {fraction} leaves no pixels of {}x{}",
            s.nx, s.ny
        )));
    }
    let (ox, oy) = (s.nx / 2 - mx / 2, s.ny / 2 - my / 2);
    Ok(ComplexVolume::from_fn(Shape::new(mx, my, s.nt), |i, j, t| x.get(ox + i, oy + j, t)))
}

fn magnitudes(x: &ComplexVolume, reference: &ComplexVolume) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.shape() != reference.shape() {
        return Err(shape_mismatch(reference.shape().as_array(), x.shape().as_array()));
    }
    Ok((x.magnitude(), reference.magnitude()))
}

/// `||x| - |ref||_2 / ||ref||_2`.
pub fn nrmse(x: &ComplexVolume, reference: &ComplexVolume) -> Result<f64> {
    let (a, b) = magnitudes(x, reference)?;
    let den: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(Error::InvalidArgument("NRMSE is undefined for a zero reference".into()));
    }
    Ok(a.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt() / den)
}

/// `20 log10(max|ref| / rmse)`; identical images give `+inf`.
pub fn psnr(x: &ComplexVolume, reference: &ComplexVolume) -> Result<f64> {
    let (a, b) = magnitudes(x, reference)?;
    let mse = a.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let peak = b.iter().fold(0.0_f64, |m, &v| m.max(v));
    Ok(20.0 * (peak / mse.sqrt()).log10())
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let mut w: Vec<f64> = (0..size * size)
        .map(|p| {
            let (i, j) = ((p / size) as f64 - c, (p % size) as f64 - c);
            (-(i * i + j * j) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Windowed local statistics `(mu_a, mu_b, var_a, var_b, cov)`.
fn local_stats(a: &[f64], b: &[f64], ny: usize, x0: usize, y0: usize, w: &[f64], size: usize) -> [f64; 5] {
    let at = |i: usize, j: usize| (x0 + i) * ny + y0 + j;
    let (mut ma, mut mb) = (0.0, 0.0);
    for i in 0..size {
        for j in 0..size {
            let k = w[i * size + j];
            ma += k * a[at(i, j)];
            mb += k * b[at(i, j)];
        }
    }
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for i in 0..size {
        for j in 0..size {
            let k = w[i * size + j];
            let (da, db) = (a[at(i, j)] - ma, b[at(i, j)] - mb);
            va += k * da * da;
            vb += k * db * db;
            cov += k * da * db;
        }
    }
    [ma, mb, va, vb, cov]
}

/// Mean of `index(stats)` over all valid window positions of every frame.
fn windowed_mean(
    x: &ComplexVolume,
    reference: &ComplexVolume,
    w: &[f64],
    size: usize,
    index: impl Fn([f64; 5]) -> f64,
) -> Result<f64> {
    let (a, b) = magnitudes(x, reference)?;
    let s = x.shape();
    if s.nx < size || s.ny < size {
        return Err(Error::InvalidArgument(format!(
            "image {}x{} is smaller than the {size}x{size} window",
            s.nx, s.ny
        )));
    }
    let fl = s.frame_len();
    let mut total = 0.0;
    let mut n = 0usize;
    for t in 0..s.nt {
        let (fa, fb) = (&a[t * fl..(t + 1) * fl], &b[t * fl..(t + 1) * fl]);
        for x0 in 0..=s.nx - size {
            for y0 in 0..=s.ny - size {
                total += index(local_stats(fa, fb, s.ny, x0, y0, w, size));
                n += 1;
            }
        }
    }
    Ok(total / n as f64)
}

/// SSIM with an 11x11 Gaussian window (sigma 1.5) and dynamic range
/// `L = max|ref|`.
pub fn ssim(x: &ComplexVolume, reference: &ComplexVolume) -> Result<f64> {
    ssim_with_range(x, reference, reference.max_abs())
}

/// SSIM with an explicit dynamic range `l`; symmetric in its image
/// arguments.
pub fn ssim_with_range(x: &ComplexVolume, reference: &ComplexVolume, l: f64) -> Result<f64> {
    let (c1, c2) = ((0.01 * l).powi(2), (0.03 * l).powi(2));
    let w = gaussian_window(11, 1.5);
    windowed_mean(x, reference, &w, 11, |[ma, mb, va, vb, cov]| {
        ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
    })
}

/// Universal image quality index over an 8x8 uniform window. Windows where
/// both images are flat score 1, or `2 mu_a mu_b / (mu_a^2 + mu_b^2)` when
/// only the variances vanish.
pub fn uiq(x: &ComplexVolume, reference: &ComplexVolume) -> Result<f64> {
    let w = vec![1.0 / 64.0; 64];
    windowed_mean(x, reference, &w, 8, |[ma, mb, va, vb, cov]| {
        let (d1, d2) = (va + vb, ma * ma + mb * mb);
        if d1 * d2 != 0.0 {
            4.0 * cov * ma * mb / (d1 * d2)
        } else if d1 == 0.0 && d2 != 0.0 {
            2.0 * ma * mb / d2
        } else {
            1.0
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub record_id: String,
    pub psnr_db: f64,
    pub nrmse: f64,
    pub ssim: f64,
    pub uiq: f64,
}

/// All four metrics on the central ROI.
pub fn score(x: &ComplexVolume, reference: &ComplexVolume, roi_fraction: f64, record_id: &str) -> Result<MetricRow> {
    let (a, b) = (central_roi(x, roi_fraction)?, central_roi(reference, roi_fraction)?);
    Ok(MetricRow {
        record_id: record_id.to_owned(),
        psnr_db: psnr(&a, &b)?,
        nrmse: nrmse(&a, &b)?,
        ssim: ssim(&a, &b)?,
        uiq: uiq(&a, &b)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Mean, sample standard deviation and linearly interpolated quartiles.
pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    if n == 0 {
        return Summary {
            mean: f64::NAN,
            std: f64::NAN,
            median: f64::NAN,
            q1: f64::NAN,
            q3: f64::NAN,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 && mean.is_finite() {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else if mean.is_finite() {
        0.0
    } else {
        f64::NAN
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Summary {
        mean,
        std,
        median: quantile(&sorted, 0.5),
        q1: quantile(&sorted, 0.25),
        q3: quantile(&sorted, 0.75),
    }
}

/// JSON has no infinities: non-finite values become `"inf"`, `"-inf"` or
/// `"nan"`.
fn number(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v.is_nan() {
        json!("nan")
    } else if v > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

fn fmt_csv(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.10e}")
    } else {
        format!("{v}")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub roi_fraction: f64,
    pub rows: Vec<MetricRow>,
}

impl EvalReport {
    pub fn from_rows(roi_fraction: f64, mut rows: Vec<MetricRow>) -> Self {
        rows.sort_by(|a, b| a.record_id.cmp(&b.record_id));
        Self { roi_fraction, rows }
    }

    pub fn column(&self, name: &str) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| match name {
                "psnr_db" => r.psnr_db,
                "nrmse" => r.nrmse,
                "ssim" => r.ssim,
                "uiq" => r.uiq,
                _ => f64::NAN,
            })
            .collect()
    }

    pub fn summary(&self, name: &str) -> Summary {
        summarize(&self.column(name))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("record_id,psnr_db,nrmse,ssim,uiq\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.record_id,
                fmt_csv(r.psnr_db),
                fmt_csv(r.nrmse),
                fmt_csv(r.ssim),
                fmt_csv(r.uiq)
            );
        }
        s
    }

    pub fn to_json(&self) -> Value {
        let mut aggregates = serde_json::Map::new();
        for name in ["psnr_db", "nrmse", "ssim", "uiq"] {
            let s = self.summary(name);
            aggregates.insert(
                name.into(),
                json!({
                    "mean": number(s.mean),
                    "std": number(s.std),
                    "median": number(s.median),
                    "q1": number(s.q1),
                    "q3": number(s.q3),
                }),
            );
        }
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| {
                json!({
                    "record_id": r.record_id,
                    "psnr_db": number(r.psnr_db),
                    "nrmse": number(r.nrmse),
                    "ssim": number(r.ssim),
                    "uiq": number(r.uiq),
                })
            })
            .collect();
        json!({
            "roi_fraction": self.roi_fraction,
            "data_range": "max |ref| over the ROI",
            "images": "magnitude",
            "aggregation": "per volume, all frames pooled",
            "n_records": self.rows.len(),
            "aggregates": aggregates,
            "records": rows,
        })
    }

    /// Writes `metrics.csv` and `metrics.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        io::write_atomic(&dir.join("metrics.csv"), self.to_csv().as_bytes())?;
        let mut text = serde_json::to_string_pretty(&self.to_json())?;
        text.push('\n');
        io::write_atomic(&dir.join("metrics.json"), text.as_bytes())
    }
}

/// Volumes in `dir`, keyed by record id: either `<id>.spt` files or
/// `<id>/x_f.spt` record directories.
pub fn list_volumes(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::MissingInput(dir.to_path_buf()));
    }
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let id = match path.file_stem().and_then(|s| s.to_str()) {
            Some(s) => s.to_owned(),
            None => continue,
        };
        if path.is_dir() && path.join("x_f.spt").is_file() {
            out.insert(id, path.join("x_f.spt"));
        } else if path.extension().is_some_and(|e| e == "spt") {
            out.insert(id, path);
        }
    }
    Ok(out)
}

/// Scores every reconstruction in `recon_dir` against its counterpart in
/// `reference_dir`.
pub fn evaluate(recon_dir: &Path, reference_dir: &Path, roi_fraction: f64) -> Result<EvalReport> {
    let recon = list_volumes(recon_dir)?;
    let reference = list_volumes(reference_dir)?;
    for id in recon.keys().chain(reference.keys()) {
        if !recon.contains_key(id) {
            return Err(Error::MissingInput(recon_dir.join(format!("{id}.spt"))));
        }
        if !reference.contains_key(id) {
            return Err(Error::MissingInput(reference_dir.join(id)));
        }
    }
    if recon.is_empty() {
        return Err(Error::MissingInput(recon_dir.to_path_buf()));
    }
    let rows = recon
        .par_iter()
        .map(|(id, path)| {
            let x = io::load_volume(path)?;
            let r = io::load_volume(&reference[id])?;
            score(&x, &r, roi_fraction, id)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_rows(roi_fraction, rows))
}

/// Binary 8-bit PGM of one frame, scaled so the maximum maps to 255.
pub fn write_pgm(path: &Path, values: &[f64], nx: usize, ny: usize) -> Result<()> {
    if values.len() != nx * ny {
        return Err(shape_mismatch(nx * ny, values.len()));
    }
    let peak = values.iter().fold(0.0_f64, |m, &v| m.max(v));
    let mut bytes = format!("P5\n{ny} {nx}\n255\n").into_bytes();
    bytes.extend(values.iter().map(|&v| {
        if peak > 0.0 {
            (v / peak * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    io::write_atomic(path, &bytes)
}

/// Writes `<id>_mag.pgm` and `<id>_err.pgm` for frame `t`.
pub fn export_pgm(dir: &Path, id: &str, x: &ComplexVolume, reference: &ComplexVolume, t: usize) -> Result<()> {
    let s = x.shape();
    if s != reference.shape() || t >= s.nt {
        return Err(shape_mismatch(reference.shape().as_array(), s.as_array()));
    }
    std::fs::create_dir_all(dir)?;
    let mag: Vec<f64> = x.frame(t).iter().map(|v| v.norm()).collect();
    let err: Vec<f64> = x.frame(t).iter().zip(reference.frame(t)).map(|(a, b)| (a.norm() - b.norm()).abs()).collect();
    write_pgm(&dir.join(format!("{id}_mag.pgm")), &mag, s.nx, s.ny)?;
    write_pgm(&dir.join(format!("{id}_err.pgm")), &err, s.nx, s.ny)
}
