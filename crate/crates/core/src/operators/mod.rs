//! Multi-coil dynamic encoding operators.
//!
//! [`ForwardModel`] applies coil sensitivities followed by a per-frame radial
//! NDFT. [`CartesianModel`] replaces the NDFT with a masked unitary FFT and
//! serves as an exactly invertible reference.

mod cartesian;
mod ndft;
mod trajectory;

pub use cartesian::{centered_fft2, CartesianModel};
pub use ndft::{ndft_adjoint, ndft_forward, PhaseTable};
pub use trajectory::{
    acceleration_factor, golden_angle_deg, golden_angle_trajectory, nyquist_spokes, ramp_density_weights,
    DensityWeights, Trajectory,
};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{shape_mismatch, Error, Result};
use crate::tensor::{inner_slices, ComplexVolume, Shape};

/// Coil sensitivity profiles, one `nx x ny` map per coil.
#[derive(Clone, Debug, PartialEq)]
pub struct CoilMaps {
    nx: usize,
    ny: usize,
    maps: Vec<Vec<Complex64>>,
}

impl CoilMaps {
    pub fn new(nx: usize, ny: usize, maps: Vec<Vec<Complex64>>) -> Result<Self> {
        if maps.is_empty() {
            return Err(Error::InvalidArgument("at least one coil map is required".into()));
        }
        if let Some(bad) = maps.iter().find(|m| m.len() != nx * ny) {
            return Err(shape_mismatch(nx * ny, bad.len()));
        }
        Ok(Self { nx, ny, maps })
    }

    /// A single coil with unit sensitivity everywhere.
    pub fn uniform(nx: usize, ny: usize) -> Self {
        Self {
            nx,
            ny,
            maps: vec![vec![Complex64::new(1.0, 0.0); nx * ny]],
        }
    }

    pub fn n_coils(&self) -> usize {
        self.maps.len()
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn map(&self, j: usize) -> &[Complex64] {
        &self.maps[j]
    }

    /// `sum_j |c_j(p)|^2` for every pixel.
    pub fn sum_of_squares(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.nx * self.ny];
        for m in &self.maps {
            for (o, c) in out.iter_mut().zip(m) {
                *o += c.norm_sqr();
            }
        }
        out
    }

    pub fn flat(&self) -> Vec<Complex64> {
        self.maps.concat()
    }
}

/// k-space samples indexed by (coil, frame, sample).
#[derive(Clone, Debug, PartialEq)]
pub struct MeasuredData {
    n_coils: usize,
    frame_lens: Vec<usize>,
    offsets: Vec<usize>,
    data: Vec<Complex64>,
}

impl MeasuredData {
    pub fn zeros(n_coils: usize, frame_lens: Vec<usize>) -> Self {
        let offsets = offsets_of(&frame_lens);
        let total = *offsets.last().unwrap();
        Self {
            n_coils,
            frame_lens,
            offsets,
            data: vec![Complex64::new(0.0, 0.0); n_coils * total],
        }
    }

    pub fn from_vec(n_coils: usize, frame_lens: Vec<usize>, data: Vec<Complex64>) -> Result<Self> {
        let offsets = offsets_of(&frame_lens);
        let total = *offsets.last().unwrap();
        if data.len() != n_coils * total {
            return Err(shape_mismatch(n_coils * total, data.len()));
        }
        Ok(Self {
            n_coils,
            frame_lens,
            offsets,
            data,
        })
    }

    pub fn n_coils(&self) -> usize {
        self.n_coils
    }

    pub fn n_frames(&self) -> usize {
        self.frame_lens.len()
    }

    pub fn frame_lens(&self) -> &[usize] {
        &self.frame_lens
    }

    fn per_coil(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn block(&self, coil: usize, t: usize) -> &[Complex64] {
        let base = coil * self.per_coil();
        &self.data[base + self.offsets[t]..base + self.offsets[t + 1]]
    }

    pub fn block_mut(&mut self, coil: usize, t: usize) -> &mut [Complex64] {
        let base = coil * self.per_coil();
        &mut self.data[base + self.offsets[t]..base + self.offsets[t + 1]]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.n_coils == other.n_coils && self.frame_lens == other.frame_lens
    }

    pub fn inner(&self, other: &Self) -> Result<Complex64> {
        if !self.same_layout(other) {
            return Err(shape_mismatch(
                (self.n_coils, &self.frame_lens),
                (other.n_coils, &other.frame_lens),
            ));
        }
        Ok(inner_slices(&self.data, &other.data))
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Multiplies frame `t` of every coil by the per-sample factors in `w[t]`.
    pub fn scale_per_sample(&mut self, w: &[Vec<f64>]) {
        for c in 0..self.n_coils {
            for (t, wt) in w.iter().enumerate() {
                for (v, s) in self.block_mut(c, t).iter_mut().zip(wt) {
                    *v *= *s;
                }
            }
        }
    }
}

fn offsets_of(lens: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(lens.len() + 1);
    offsets.push(0);
    for l in lens {
        offsets.push(offsets.last().unwrap() + l);
    }
    offsets
}

/// A linear multi-coil encoding `A` together with its adjoint and optional
/// density compensation `W`.
pub trait EncodingOperator: Sync {
    fn image_shape(&self) -> Shape;
    fn n_coils(&self) -> usize;
    /// Samples per frame for each coil.
    fn frame_lens(&self) -> Vec<usize>;
    fn forward(&self, x: &ComplexVolume) -> Result<MeasuredData>;
    fn adjoint(&self, y: &MeasuredData) -> Result<ComplexVolume>;
    /// Per-frame `sqrt(w_i)`, if density compensation is attached.
    fn sqrt_weights(&self) -> Option<&[Vec<f64>]>;

    fn check_data(&self, y: &MeasuredData) -> Result<()> {
        if y.n_coils() != self.n_coils() || y.frame_lens() != self.frame_lens().as_slice() {
            return Err(shape_mismatch(
                (self.n_coils(), self.frame_lens()),
                (y.n_coils(), y.frame_lens()),
            ));
        }
        Ok(())
    }

    fn check_image(&self, x: &ComplexVolume) -> Result<()> {
        if x.shape() != self.image_shape() {
            return Err(shape_mismatch(self.image_shape(), x.shape()));
        }
        Ok(())
    }
}

/// `A# y = A^H W^{1/2} y`.
pub fn pseudo_inverse<A: EncodingOperator + ?Sized>(op: &A, y: &MeasuredData) -> Result<ComplexVolume> {
    let w = op
        .sqrt_weights()
        .ok_or_else(|| Error::InvalidArgument("pseudo-inverse requires density weights".into()))?;
    op.check_data(y)?;
    let mut yw = y.clone();
    yw.scale_per_sample(w);
    op.adjoint(&yw)
}

/// `A^H W^{1/2} A x + lambda x`; `W` is taken as identity when absent.
pub fn normal_op<A: EncodingOperator + ?Sized>(op: &A, x: &ComplexVolume, lambda: f64) -> Result<ComplexVolume> {
    let mut y = op.forward(x)?;
    if let Some(w) = op.sqrt_weights() {
        y.scale_per_sample(w);
    }
    let mut out = op.adjoint(&y)?;
    if lambda != 0.0 {
        out.axpy(lambda, x);
    }
    Ok(out)
}

/// `1/2 <Ax - y, W^{1/2} (Ax - y)>`, the data term whose Hessian is the
/// density-compensated normal operator.
pub fn data_fidelity<A: EncodingOperator + ?Sized>(op: &A, x: &ComplexVolume, y: &MeasuredData) -> Result<f64> {
    op.check_data(y)?;
    let mut r = op.forward(x)?;
    r.as_mut_slice()
        .iter_mut()
        .zip(y.as_slice())
        .for_each(|(a, b)| *a -= b);
    let mut wr = r.clone();
    if let Some(w) = op.sqrt_weights() {
        wr.scale_per_sample(w);
    }
    Ok(0.5 * r.inner(&wr)?.re)
}

/// The radial multi-coil model `A = (I_Nc (x) E) C`.
#[derive(Clone, Debug)]
pub struct ForwardModel {
    shape: Shape,
    coils: CoilMaps,
    traj: Trajectory,
    weights: Option<DensityWeights>,
    sqrt_weights: Option<Vec<Vec<f64>>>,
    tables: Vec<PhaseTable>,
}

impl ForwardModel {
    pub fn new(shape: Shape, coils: CoilMaps, traj: Trajectory, weights: Option<DensityWeights>) -> Result<Self> {
        if coils.nx() != shape.nx || coils.ny() != shape.ny {
            return Err(shape_mismatch((shape.nx, shape.ny), (coils.nx(), coils.ny())));
        }
        if traj.n_frames() != shape.nt {
            return Err(shape_mismatch(shape.nt, traj.n_frames()));
        }
        if let Some(w) = &weights {
            let lens: Vec<usize> = w.frames().iter().map(Vec::len).collect();
            if lens != vec![traj.samples_per_frame(); shape.nt] {
                return Err(shape_mismatch(traj.samples_per_frame(), lens));
            }
        }
        let tables = traj
            .frames()
            .iter()
            .map(|c| PhaseTable::new(shape.nx, shape.ny, c))
            .collect::<Result<Vec<_>>>()?;
        let sqrt_weights = weights
            .as_ref()
            .map(|w| w.frames().iter().map(|f| f.iter().map(|v| v.sqrt()).collect()).collect());
        Ok(Self {
            shape,
            coils,
            traj,
            weights,
            sqrt_weights,
            tables,
        })
    }

    /// Radial model with ramp density compensation on a golden-angle
    /// trajectory.
    pub fn golden_angle(shape: Shape, coils: CoilMaps, spokes_per_frame: usize) -> Result<Self> {
        let traj = golden_angle_trajectory(shape.nx, shape.nt, spokes_per_frame)?;
        let weights = ramp_density_weights(&traj);
        Self::new(shape, coils, traj, Some(weights))
    }

    pub fn coils(&self) -> &CoilMaps {
        &self.coils
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.traj
    }

    pub fn weights(&self) -> Option<&DensityWeights> {
        self.weights.as_ref()
    }
}

impl EncodingOperator for ForwardModel {
    fn image_shape(&self) -> Shape {
        self.shape
    }

    fn n_coils(&self) -> usize {
        self.coils.n_coils()
    }

    fn frame_lens(&self) -> Vec<usize> {
        vec![self.traj.samples_per_frame(); self.shape.nt]
    }

    fn forward(&self, x: &ComplexVolume) -> Result<MeasuredData> {
        self.check_image(x)?;
        let nt = self.shape.nt;
        let m = self.traj.samples_per_frame();
        let mut out = MeasuredData::zeros(self.n_coils(), self.frame_lens());
        // coil-major then frame, matching the MeasuredData layout
        out.as_mut_slice()
            .par_chunks_mut(m)
            .enumerate()
            .for_each(|(idx, block)| {
                let (j, t) = (idx / nt, idx % nt);
                let weighted: Vec<Complex64> = x
                    .frame(t)
                    .iter()
                    .zip(self.coils.map(j))
                    .map(|(v, c)| v * c)
                    .collect();
                self.tables[t].forward_into(&weighted, block);
            });
        Ok(out)
    }

    fn adjoint(&self, y: &MeasuredData) -> Result<ComplexVolume> {
        self.check_data(y)?;
        let mut out = ComplexVolume::zeros(self.shape);
        let n = self.shape.frame_len();
        out.as_mut_slice()
            .par_chunks_mut(n)
            .enumerate()
            .for_each(|(t, frame)| {
                let mut tmp = vec![Complex64::new(0.0, 0.0); n];
                for j in 0..self.n_coils() {
                    tmp.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
                    self.tables[t].adjoint_add(y.block(j, t), &mut tmp);
                    for ((f, v), c) in frame.iter_mut().zip(&tmp).zip(self.coils.map(j)) {
                        *f += c.conj() * v;
                    }
                }
            });
        Ok(out)
    }

    fn sqrt_weights(&self) -> Option<&[Vec<f64>]> {
        self.sqrt_weights.as_deref()
    }
}

#[cfg(test)]
pub(crate) mod test_util {
    use super::*;
    use rand::{Rng, SeedableRng};

    pub fn random_volume(shape: Shape, seed: u64) -> ComplexVolume {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        ComplexVolume::from_fn(shape, |_, _, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    pub fn random_data(n_coils: usize, lens: Vec<usize>, seed: u64) -> MeasuredData {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let total: usize = lens.iter().sum::<usize>() * n_coils;
        let data = (0..total)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        MeasuredData::from_vec(n_coils, lens, data).unwrap()
    }

    /// Smooth, non-normalized coil profiles for operator tests.
    pub fn test_coils(nx: usize, ny: usize, n: usize) -> CoilMaps {
        let maps = (0..n)
            .map(|j| {
                (0..nx * ny)
                    .map(|p| {
                        let (x, y) = ((p / ny) as f64, (p % ny) as f64);
                        Complex64::from_polar(1.0 + 0.1 * (x + j as f64), 0.2 * y - 0.3 * j as f64)
                    })
                    .collect()
            })
            .collect();
        CoilMaps::new(nx, ny, maps).unwrap()
    }
}
