//! Direct non-uniform discrete Fourier transform of a single 2-D frame.
//!
//! `y_i = N^{-1/2} sum_r x(r) exp(-2 pi i k_i . r)` with `r` the centered
//! integer pixel coordinates in `[-n/2, n/2)` and `N = nx * ny`.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::trajectory::check_coordinate;
use crate::error::{shape_mismatch, Result};

/// Separable phase factors for one set of sample coordinates.
#[derive(Clone, Debug)]
pub struct PhaseTable {
    nx: usize,
    ny: usize,
    m: usize,
    /// `exp(-2 pi i kx_i rx)`, row per sample
    ex: Vec<Complex64>,
    /// `exp(-2 pi i ky_i ry)`, row per sample
    ey: Vec<Complex64>,
    scale: f64,
}

fn phase_row(k: f64, n: usize) -> impl Iterator<Item = Complex64> {
    let half = (n / 2) as f64;
    (0..n).map(move |i| Complex64::from_polar(1.0, -2.0 * PI * k * (i as f64 - half)))
}

impl PhaseTable {
    pub fn new(nx: usize, ny: usize, coords: &[[f64; 2]]) -> Result<Self> {
        let mut ex = Vec::with_capacity(coords.len() * nx);
        let mut ey = Vec::with_capacity(coords.len() * ny);
        for &c in coords {
            check_coordinate(c)?;
            ex.extend(phase_row(c[0], nx));
            ey.extend(phase_row(c[1], ny));
        }
        Ok(Self {
            nx,
            ny,
            m: coords.len(),
            ex,
            ey,
            scale: 1.0 / ((nx * ny) as f64).sqrt(),
        })
    }

    pub fn n_samples(&self) -> usize {
        self.m
    }

    /// Writes the transform of `image` (row-major `nx x ny`) into `out`.
    pub fn forward_into(&self, image: &[Complex64], out: &mut [Complex64]) {
        debug_assert_eq!(image.len(), self.nx * self.ny);
        debug_assert_eq!(out.len(), self.m);
        for (i, o) in out.iter_mut().enumerate() {
            let ex = &self.ex[i * self.nx..(i + 1) * self.nx];
            let ey = &self.ey[i * self.ny..(i + 1) * self.ny];
            let mut acc = Complex64::new(0.0, 0.0);
            for (row, &px) in image.chunks_exact(self.ny).zip(ex) {
                let mut s = Complex64::new(0.0, 0.0);
                for (v, &py) in row.iter().zip(ey) {
                    s += v * py;
                }
                acc += s * px;
            }
            *o = acc * self.scale;
        }
    }

    /// Accumulates the adjoint transform of `samples` into `image`.
    pub fn adjoint_add(&self, samples: &[Complex64], image: &mut [Complex64]) {
        debug_assert_eq!(samples.len(), self.m);
        debug_assert_eq!(image.len(), self.nx * self.ny);
        let mut weighted = vec![Complex64::new(0.0, 0.0); self.m];
        for x in 0..self.nx {
            for (i, w) in weighted.iter_mut().enumerate() {
                *w = samples[i] * self.ex[i * self.nx + x].conj() * self.scale;
            }
            let row = &mut image[x * self.ny..(x + 1) * self.ny];
            for (i, &w) in weighted.iter().enumerate() {
                let ey = &self.ey[i * self.ny..(i + 1) * self.ny];
                for (v, py) in row.iter_mut().zip(ey) {
                    *v += w * py.conj();
                }
            }
        }
    }
}

/// Evaluates the transform of one `nx x ny` frame at `coords`.
pub fn ndft_forward(frame: &[Complex64], nx: usize, ny: usize, coords: &[[f64; 2]]) -> Result<Vec<Complex64>> {
    if frame.len() != nx * ny {
        return Err(shape_mismatch(nx * ny, frame.len()));
    }
    let table = PhaseTable::new(nx, ny, coords)?;
    let mut out = vec![Complex64::new(0.0, 0.0); coords.len()];
    table.forward_into(frame, &mut out);
    Ok(out)
}

/// Exact adjoint of [`ndft_forward`].
pub fn ndft_adjoint(samples: &[Complex64], coords: &[[f64; 2]], nx: usize, ny: usize) -> Result<Vec<Complex64>> {
    if samples.len() != coords.len() {
        return Err(shape_mismatch(coords.len(), samples.len()));
    }
    let table = PhaseTable::new(nx, ny, coords)?;
    let mut image = vec![Complex64::new(0.0, 0.0); nx * ny];
    table.adjoint_add(samples, &mut image);
    Ok(image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::golden_angle_trajectory;
    use crate::tensor::inner_slices;
    use rand::{Rng, SeedableRng};

    fn random(n: usize, seed: u64) -> Vec<Complex64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn dc_of_constant_image() {
        let c = Complex64::new(0.3, -0.7);
        let y = ndft_forward(&vec![c; 6 * 4], 6, 4, &[[0.0, 0.0]]).unwrap();
        assert!((y[0] - c * 24f64.sqrt()).norm() < 1e-12);
    }

    #[test]
    fn centered_impulse_has_flat_spectrum() {
        let (nx, ny) = (8, 6);
        let mut img = vec![Complex64::new(0.0, 0.0); nx * ny];
        img[(nx / 2) * ny + ny / 2] = Complex64::new(1.0, 0.0);
        let tr = golden_angle_trajectory(8, 1, 3).unwrap();
        let y = ndft_forward(&img, nx, ny, tr.frame(0)).unwrap();
        let expect = 1.0 / ((nx * ny) as f64).sqrt();
        assert!(y.iter().all(|v| (v.norm() - expect).abs() < 1e-14));
    }

    #[test]
    fn adjoint_identity_and_trivial_cases() {
        let tr = golden_angle_trajectory(8, 1, 3).unwrap();
        let coords = tr.frame(0);
        for seed in 0..5 {
            let x = random(64, seed);
            let y = random(coords.len(), seed + 100);
            let ax = ndft_forward(&x, 8, 8, coords).unwrap();
            let ahy = ndft_adjoint(&y, coords, 8, 8).unwrap();
            let lhs = inner_slices(&ax, &y);
            let rhs = inner_slices(&x, &ahy);
            let nx: f64 = x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            let ny: f64 = y.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            assert!((lhs - rhs).norm() <= 1e-10 * nx * ny);
        }
        let zero = ndft_adjoint(&vec![Complex64::new(0.0, 0.0); coords.len()], coords, 8, 8).unwrap();
        assert!(zero.iter().all(|v| v.norm() == 0.0));

        let v = Complex64::new(2.0, 1.0);
        let img = ndft_adjoint(&[v], &[[0.0, 0.0]], 4, 4).unwrap();
        assert!(img.iter().all(|p| (p - v / 4.0).norm() < 1e-15));
    }

    #[test]
    fn rejects_out_of_range_coordinates() {
        let img = vec![Complex64::new(1.0, 0.0); 16];
        assert!(ndft_forward(&img, 4, 4, &[[0.5, 0.0]]).is_err());
        assert!(ndft_forward(&img, 4, 4, &[[0.0, -0.6]]).is_err());
        assert!(ndft_adjoint(&[Complex64::new(1.0, 0.0)], &[[0.0, 0.5]], 4, 4).is_err());
    }
}
