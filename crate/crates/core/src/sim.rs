//! Synthetic cine phantoms, coil sensitivities, noisy k-space and dataset
//! persistence.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::operators::{acceleration_factor, CoilMaps, EncodingOperator, ForwardModel, MeasuredData};
use crate::tensor::{ComplexVolume, Shape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub shape: Shape,
    pub seed: u64,
    pub n_ellipses: usize,
    /// Peak relative change of the ventricle radii over the cycle.
    pub motion_amplitude: f64,
    /// Range of ellipse intensity magnitudes before normalization.
    pub intensity_range: (f64, f64),
}

impl PhantomSpec {
    pub fn new(shape: Shape, seed: u64) -> Self {
        Self {
            shape,
            seed,
            n_ellipses: 6,
            motion_amplitude: 0.25,
            intensity_range: (0.2, 1.0),
        }
    }

    fn validate(&self) -> Result<()> {
        let s = self.shape;
        if s.nx < 4 || s.ny < 4 || s.nt == 0 {
            return Err(Error::InvalidArgument(format!("degenerate phantom shape {:?}", s.as_array())));
        }
        if self.n_ellipses == 0 {
            return Err(Error::InvalidArgument("phantom needs at least one ellipse".into()));
        }
        if !(0.0..=0.5).contains(&self.motion_amplitude) {
            return Err(Error::InvalidArgument(format!(
                "motion_amplitude must lie in [0, 0.5], got {}",
                self.motion_amplitude
            )));
        }
        let (lo, hi) = self.intensity_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!("bad intensity range ({lo}, {hi})")));
        }
        Ok(())
    }
}

struct Ellipse {
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
    angle: f64,
    value: Complex64,
}

impl Ellipse {
    fn contains(&self, u: f64, v: f64, scale: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (du, dv) = (u - self.cx, v - self.cy);
        let a = (c * du + s * dv) / (self.ax * scale);
        let b = (-s * du + c * dv) / (self.ay * scale);
        a * a + b * b <= 1.0
    }
}

/// Ventricle radius scale in frame `t`: `1 + a cos(2 pi t / nt)`.
pub fn ventricle_scale(t: usize, nt: usize, amplitude: f64) -> f64 {
    1.0 + amplitude * (2.0 * PI * t as f64 / nt as f64).cos()
}

/// Seeded piecewise-constant ellipse phantom with one pulsating ellipse
/// and a smooth global phase, normalized to unit peak magnitude.
pub fn make_cine_phantom(spec: &PhantomSpec) -> Result<ComplexVolume> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (lo, hi) = spec.intensity_range;
    let value = |rng: &mut ChaCha8Rng| Complex64::from_polar(rng.random_range(lo..=hi), rng.random_range(-0.5..0.5));
    // normalized coordinates in [-1, 1); the first ellipse is the body, the second the ventricle
    let mut ellipses = vec![Ellipse {
        cx: 0.0,
        cy: 0.0,
        ax: 0.85,
        ay: 0.7,
        angle: rng.random_range(-0.2..0.2),
        value: value(&mut rng),
    }];
    for i in 1..spec.n_ellipses {
        let r = if i == 1 { 0.15 } else { 0.5 };
        ellipses.push(Ellipse {
            cx: rng.random_range(-r..r),
            cy: rng.random_range(-r..r),
            ax: rng.random_range(0.1..0.3),
            ay: rng.random_range(0.1..0.3),
            angle: rng.random_range(0.0..PI),
            value: value(&mut rng),
        });
    }
    let phase = (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
    let Shape { nx, ny, nt } = spec.shape;
    let mut x = ComplexVolume::from_fn(spec.shape, |i, j, t| {
        let u = 2.0 * i as f64 / nx as f64 - 1.0;
        let v = 2.0 * j as f64 / ny as f64 - 1.0;
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, e) in ellipses.iter().enumerate() {
            let scale = if k == 1 { ventricle_scale(t, nt, spec.motion_amplitude) } else { 1.0 };
            if e.contains(u, v, scale) {
                acc += e.value;
            }
        }
        acc * Complex64::from_polar(1.0, phase.0 * u + phase.1 * v)
    });
    let peak = x.max_abs();
    if peak == 0.0 {
        return Err(Error::InvalidArgument("phantom is empty at this resolution".into()));
    }
    x.scale(1.0 / peak);
    Ok(x)
}

/// Gaussian-bump coil profiles placed around the field of view, with
/// seeded angular jitter and linear phase, normalized to unit
/// sum-of-squares at every pixel.
pub fn make_coil_maps(nx: usize, ny: usize, n_coils: usize, seed: u64) -> Result<CoilMaps> {
    if n_coils == 0 {
        return Err(Error::InvalidArgument("need at least one coil".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = 0.9;
    let raw: Vec<Vec<Complex64>> = (0..n_coils)
        .map(|j| {
            let theta = 2.0 * PI * j as f64 / n_coils as f64 + rng.random_range(-0.2..0.2);
            let (cu, cv) = (0.9 * theta.cos(), 0.9 * theta.sin());
            let slope = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let offset = rng.random_range(-PI..PI);
            (0..nx * ny)
                .map(|p| {
                    let u = 2.0 * (p / ny) as f64 / nx as f64 - 1.0;
                    let v = 2.0 * (p % ny) as f64 / ny as f64 - 1.0;
                    let d2 = (u - cu).powi(2) + (v - cv).powi(2);
                    Complex64::from_polar((-d2 / (2.0 * width * width)).exp(), offset + slope.0 * u + slope.1 * v)
                })
                .collect()
        })
        .collect();
    let mut maps = raw.clone();
    for p in 0..nx * ny {
        let ss = raw.iter().map(|m| m[p].norm_sqr()).sum::<f64>().sqrt();
        for m in maps.iter_mut() {
            m[p] /= ss;
        }
    }
    CoilMaps::new(nx, ny, maps)
}

/// `y = A x + e` with i.i.d. Gaussian noise of standard deviation `sigma`
/// on the real and imaginary parts.
pub fn simulate_kspace<A: EncodingOperator + ?Sized>(x: &ComplexVolume, op: &A, sigma: f64, seed: u64) -> Result<MeasuredData> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise level must be >= 0, got {sigma}")));
    }
    let mut y = op.forward(x)?;
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in y.as_mut_slice() {
            *v += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }
    Ok(y)
}

/// Acquisition and phantom settings shared by every record of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    pub n_coils: usize,
    pub spokes_per_frame: usize,
    pub sigma: f64,
    pub n_ellipses: usize,
    pub motion_amplitude: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_train: 12,
            n_val: 3,
            n_test: 4,
            nx: 32,
            ny: 32,
            nt: 8,
            n_coils: 4,
            spokes_per_frame: 3,
            sigma: 0.02,
            n_ellipses: 6,
            motion_amplitude: 0.25,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn shape(&self) -> Shape {
        Shape::new(self.nx, self.ny, self.nt)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 4 || self.ny < 4 || self.nt == 0 || self.n_coils == 0 || self.spokes_per_frame == 0 {
            return Err(Error::Config("dataset dimensions must be positive (nx, ny >= 4)".into()));
        }
        if self.nx != self.ny {
            return Err(Error::Config(format!("radial sampling needs square frames, got {}x{}", self.nx, self.ny)));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::Config(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if self.n_train.max(self.n_val).max(self.n_test) >= SPLIT_STRIDE as usize {
            return Err(Error::Config(format!("at most {} records per split", SPLIT_STRIDE - 1)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn index(self) -> u64 {
        self as u64
    }
}

const SPLIT_STRIDE: u64 = 1 << 16;

/// Per-record seed. Splits occupy disjoint ranges of the seed space.
pub fn record_seed(base: u64, split: Split, i: usize) -> u64 {
    base.wrapping_mul(4 * SPLIT_STRIDE) + split.index() * SPLIT_STRIDE + i as u64
}

/// Operator metadata sufficient to rebuild the encoding operator and
/// regenerate the measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordManifest {
    pub record_id: String,
    pub split: Split,
    pub record_seed: u64,
    pub phantom_seed: u64,
    pub coil_seed: u64,
    pub noise_seed: u64,
    pub shape: Shape,
    pub n_coils: usize,
    pub spokes_per_frame: usize,
    pub trajectory: String,
    pub density_compensation: String,
    pub sigma: f64,
    pub acceleration: f64,
}

impl RecordManifest {
    fn new(cfg: &DatasetConfig, split: Split, i: usize) -> Self {
        let seed = record_seed(cfg.seed, split, i);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            record_id: format!("rec_{i:04}"),
            split,
            record_seed: seed,
            phantom_seed: rng.random(),
            coil_seed: rng.random(),
            noise_seed: rng.random(),
            shape: cfg.shape(),
            n_coils: cfg.n_coils,
            spokes_per_frame: cfg.spokes_per_frame,
            trajectory: "golden-angle".into(),
            density_compensation: "ramp".into(),
            sigma: cfg.sigma,
            acceleration: acceleration_factor(cfg.nx, cfg.spokes_per_frame),
        }
    }

    pub fn operator(&self) -> Result<ForwardModel> {
        let coils = make_coil_maps(self.shape.nx, self.shape.ny, self.n_coils, self.coil_seed)?;
        ForwardModel::golden_angle(self.shape, coils, self.spokes_per_frame)
    }
}

/// Top-level `dataset.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: String,
    pub config: DatasetConfig,
    pub counts: SplitCounts,
    pub record_seeds: SplitSeeds,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSeeds {
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
}

/// A loaded record together with its rebuilt operator.
pub struct DatasetRecord {
    pub manifest: RecordManifest,
    pub x_f: ComplexVolume,
    pub y: MeasuredData,
    pub op: ForwardModel,
}

fn generate(cfg: &DatasetConfig, split: Split, i: usize) -> Result<(RecordManifest, ComplexVolume, MeasuredData)> {
    let m = RecordManifest::new(cfg, split, i);
    let spec = PhantomSpec {
        n_ellipses: cfg.n_ellipses,
        motion_amplitude: cfg.motion_amplitude,
        ..PhantomSpec::new(cfg.shape(), m.phantom_seed)
    };
    let x = make_cine_phantom(&spec)?;
    let y = simulate_kspace(&x, &m.operator()?, m.sigma, m.noise_seed)?;
    Ok((m, x, y))
}

fn data_shape(y: &MeasuredData) -> Result<Vec<usize>> {
    let lens = y.frame_lens();
    let n = lens[0];
    if lens.iter().any(|&l| l != n) {
        return Err(Error::Format("frames have different sample counts".into()));
    }
    Ok(vec![y.n_coils(), lens.len(), n])
}

pub fn save_measured(path: &Path, y: &MeasuredData) -> Result<()> {
    io::write_complex(path, &data_shape(y)?, y.as_slice())
}

pub fn load_measured(path: &Path) -> Result<MeasuredData> {
    let (shape, data) = io::read(path)?.into_complex()?;
    if shape.len() != 3 {
        return Err(Error::Format(format!("{}: expected [coils, frames, samples], got {shape:?}", path.display())));
    }
    MeasuredData::from_vec(shape[0], vec![shape[2]; shape[1]], data)
}

/// Writes `train/`, `val/` and `test/` record directories plus
/// `dataset.json` under `root`. An existing non-empty `root` is replaced
/// only with `overwrite`.
pub fn make_dataset(root: &Path, cfg: &DatasetConfig, overwrite: bool) -> Result<DatasetManifest> {
    cfg.validate()?;
    if root.exists() && std::fs::read_dir(root)?.next().is_some() {
        if !overwrite {
            return Err(Error::Exists(root.to_path_buf()));
        }
        std::fs::remove_dir_all(root)?;
    }
    let jobs: Vec<(Split, usize)> = Split::ALL
        .iter()
        .flat_map(|&s| (0..count(cfg, s)).map(move |i| (s, i)))
        .collect();
    jobs.par_iter()
        .map(|&(split, i)| {
            let (m, x, y) = generate(cfg, split, i)?;
            let dir = root.join(split.name()).join(&m.record_id);
            std::fs::create_dir_all(&dir)?;
            io::save_volume(&dir.join("x_f.spt"), &x)?;
            save_measured(&dir.join("y.spt"), &y)?;
            io::write_json(&dir.join("manifest.json"), &m)
        })
        .collect::<Result<Vec<()>>>()?;
    let seeds = |s: Split| (0..count(cfg, s)).map(|i| record_seed(cfg.seed, s, i)).collect();
    let manifest = DatasetManifest {
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        counts: SplitCounts {
            train: cfg.n_train,
            val: cfg.n_val,
            test: cfg.n_test,
        },
        record_seeds: SplitSeeds {
            train: seeds(Split::Train),
            val: seeds(Split::Val),
            test: seeds(Split::Test),
        },
    };
    std::fs::create_dir_all(root)?;
    io::write_json(&root.join("dataset.json"), &manifest)?;
    Ok(manifest)
}

fn count(cfg: &DatasetConfig, s: Split) -> usize {
    match s {
        Split::Train => cfg.n_train,
        Split::Val => cfg.n_val,
        Split::Test => cfg.n_test,
    }
}

pub fn read_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join("dataset.json");
    if !path.exists() {
        return Err(Error::MissingInput(path));
    }
    io::read_json(&path)
}

pub fn load_record(dir: &Path) -> Result<DatasetRecord> {
    let path = |name: &str| -> Result<PathBuf> {
        let p = dir.join(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::MissingInput(p))
        }
    };
    let manifest: RecordManifest = io::read_json(&path("manifest.json")?)?;
    let x_f = io::load_volume(&path("x_f.spt")?)?;
    let y = load_measured(&path("y.spt")?)?;
    let op = manifest.operator()?;
    op.check_image(&x_f)?;
    op.check_data(&y)?;
    Ok(DatasetRecord { manifest, x_f, y, op })
}

/// Records of one split in id order.
pub fn load_split(root: &Path, split: Split) -> Result<Vec<DatasetRecord>> {
    let manifest = read_manifest(root)?;
    (0..count(&manifest.config, split))
        .map(|i| load_record(&root.join(split.name()).join(format!("rec_{i:04}"))))
        .collect()
}
