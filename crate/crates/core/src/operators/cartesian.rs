use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{CoilMaps, EncodingOperator, MeasuredData};
use crate::error::{shape_mismatch, Result};
use crate::tensor::{ComplexVolume, Shape};

/// Centered, unitary 2-D FFT plans for one frame size.
#[derive(Clone)]
struct Fft2 {
    nx: usize,
    ny: usize,
    fwd: [Arc<dyn Fft<f64>>; 2],
    inv: [Arc<dyn Fft<f64>>; 2],
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft2({}x{})", self.nx, self.ny)
    }
}

impl Fft2 {
    fn new(nx: usize, ny: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            nx,
            ny,
            fwd: [planner.plan_fft_forward(nx), planner.plan_fft_forward(ny)],
            inv: [planner.plan_fft_inverse(nx), planner.plan_fft_inverse(ny)],
        }
    }

    /// In-place transform of a row-major `nx x ny` frame. Index `u` of the
    /// output holds frequency `(u - n/2) / n`, matching the NDFT at grid
    /// coordinates.
    fn apply(&self, buf: &mut [Complex64], inverse: bool) {
        let (nx, ny) = (self.nx, self.ny);
        let plans = if inverse { &self.inv } else { &self.fwd };
        let (hx, hy) = (nx / 2, ny / 2);
        let mut line = vec![Complex64::new(0.0, 0.0); nx.max(ny)];
        // along y
        for row in buf.chunks_exact_mut(ny) {
            for (m, l) in line[..ny].iter_mut().enumerate() {
                *l = row[(m + hy) % ny];
            }
            plans[1].process(&mut line[..ny]);
            for (u, r) in row.iter_mut().enumerate() {
                *r = line[(u + ny - hy) % ny];
            }
        }
        // along x
        for col in 0..ny {
            for (m, l) in line[..nx].iter_mut().enumerate() {
                *l = buf[((m + hx) % nx) * ny + col];
            }
            plans[0].process(&mut line[..nx]);
            for u in 0..nx {
                buf[u * ny + col] = line[(u + nx - hx) % nx];
            }
        }
        let s = 1.0 / ((nx * ny) as f64).sqrt();
        buf.iter_mut().for_each(|v| *v *= s);
    }
}

/// Centered unitary 2-D FFT of one frame (inverse when `inverse`).
pub fn centered_fft2(frame: &[Complex64], nx: usize, ny: usize, inverse: bool) -> Result<Vec<Complex64>> {
    if frame.len() != nx * ny {
        return Err(shape_mismatch(nx * ny, frame.len()));
    }
    let mut buf = frame.to_vec();
    Fft2::new(nx, ny).apply(&mut buf, inverse);
    Ok(buf)
}

/// Multi-coil masked Cartesian encoding: per frame and coil, a centered
/// unitary FFT followed by selection of the sampled coefficients.
/// Density weights are identically one.
#[derive(Clone, Debug)]
pub struct CartesianModel {
    shape: Shape,
    coils: CoilMaps,
    sampled: Vec<Vec<usize>>,
    ones: Vec<Vec<f64>>,
    fft: Fft2,
}

impl CartesianModel {
    /// `mask` uses the volume layout of [`Shape::index`].
    pub fn new(shape: Shape, coils: CoilMaps, mask: &[bool]) -> Result<Self> {
        if mask.len() != shape.len() {
            return Err(shape_mismatch(shape.len(), mask.len()));
        }
        if coils.nx() != shape.nx || coils.ny() != shape.ny {
            return Err(shape_mismatch((shape.nx, shape.ny), (coils.nx(), coils.ny())));
        }
        let n = shape.frame_len();
        let sampled: Vec<Vec<usize>> = mask
            .chunks(n)
            .map(|f| f.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect())
            .collect();
        let ones = sampled.iter().map(|s| vec![1.0; s.len()]).collect();
        Ok(Self {
            shape,
            coils,
            sampled,
            ones,
            fft: Fft2::new(shape.nx, shape.ny),
        })
    }

    pub fn fully_sampled(shape: Shape, coils: CoilMaps) -> Result<Self> {
        Self::new(shape, coils, &vec![true; shape.len()])
    }

    /// Grid coordinates `(u - nx/2) / nx, (v - ny/2) / ny` of the sampled
    /// coefficients of frame `t`.
    pub fn sample_coords(&self, t: usize) -> Vec<[f64; 2]> {
        let (nx, ny) = (self.shape.nx, self.shape.ny);
        self.sampled[t]
            .iter()
            .map(|&i| {
                let (u, v) = (i / ny, i % ny);
                [
                    (u as f64 - (nx / 2) as f64) / nx as f64,
                    (v as f64 - (ny / 2) as f64) / ny as f64,
                ]
            })
            .collect()
    }
}

impl EncodingOperator for CartesianModel {
    fn image_shape(&self) -> Shape {
        self.shape
    }

    fn n_coils(&self) -> usize {
        self.coils.n_coils()
    }

    fn frame_lens(&self) -> Vec<usize> {
        self.sampled.iter().map(Vec::len).collect()
    }

    fn forward(&self, x: &ComplexVolume) -> Result<MeasuredData> {
        self.check_image(x)?;
        let mut out = MeasuredData::zeros(self.n_coils(), self.frame_lens());
        for j in 0..self.n_coils() {
            for t in 0..self.shape.nt {
                let mut buf: Vec<Complex64> =
                    x.frame(t).iter().zip(self.coils.map(j)).map(|(v, c)| v * c).collect();
                self.fft.apply(&mut buf, false);
                for (o, &i) in out.block_mut(j, t).iter_mut().zip(&self.sampled[t]) {
                    *o = buf[i];
                }
            }
        }
        Ok(out)
    }

    fn adjoint(&self, y: &MeasuredData) -> Result<ComplexVolume> {
        self.check_data(y)?;
        let mut out = ComplexVolume::zeros(self.shape);
        let n = self.shape.frame_len();
        for t in 0..self.shape.nt {
            for j in 0..self.n_coils() {
                let mut buf = vec![Complex64::new(0.0, 0.0); n];
                for (&i, v) in self.sampled[t].iter().zip(y.block(j, t)) {
                    buf[i] = *v;
                }
                self.fft.apply(&mut buf, true);
                for ((o, v), c) in out.frame_mut(t).iter_mut().zip(&buf).zip(self.coils.map(j)) {
                    *o += c.conj() * v;
                }
            }
        }
        Ok(out)
    }

    fn sqrt_weights(&self) -> Option<&[Vec<f64>]> {
        Some(&self.ones)
    }
}
