//! Convolutional analysis regularizer: circular 3-D convolutions, soft
//! thresholding, and the denoising step
//! `z = sum_k h_k^T * S_{alpha/lambda}(h_k * x)`.
//!
//! Convolution is true convolution with a centered kernel:
//! `(h * u)(p) = sum_q h(q) u(p - q)` where `q` ranges over
//! `[-(k_f-1)/2, (k_f-1)/2]^3` and indices wrap circularly. Kernel axis 0
//! runs along x, axis 1 along y, axis 2 along t.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{shape_mismatch, Error, Result};
use crate::io;
use crate::tensor::{ComplexVolume, RealVolume, Shape};

pub const DEFAULT_SMOOTH_B: f64 = 0.001;

pub fn softplus(r: f64) -> f64 {
    // log(1 + e^r) without overflow
    r.max(0.0) + (-r.abs()).exp().ln_1p()
}

pub fn inverse_softplus(v: f64) -> f64 {
    assert!(v > 0.0, "softplus only reaches positive values");
    v + (-(-v).exp_m1()).ln()
}

pub fn logistic(r: f64) -> f64 {
    if r >= 0.0 {
        1.0 / (1.0 + (-r).exp())
    } else {
        let e = r.exp();
        e / (1.0 + e)
    }
}

/// `sign(z) max(|z| - t, 0)`.
pub fn soft_threshold(z: f64, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be nonnegative, got {t}")));
    }
    Ok(exact_shrink(z, t))
}

#[inline]
fn exact_shrink(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// `z + (sqrt((z-t)^2 + b) - sqrt((z+t)^2 + b)) / 2`, a smooth surrogate of
/// soft thresholding.
pub fn smooth_soft_threshold(z: f64, t: f64, b: f64) -> Result<f64> {
    if !(b > 0.0) {
        return Err(Error::InvalidArgument(format!("smoothing parameter must be positive, got {b}")));
    }
    Ok(smooth_shrink(z, t, b))
}

#[inline]
fn smooth_shrink(z: f64, t: f64, b: f64) -> f64 {
    let (m, p) = (z - t, z + t);
    z + 0.5 * ((m * m + b).sqrt() - (p * p + b).sqrt())
}

/// Partial derivatives `(dS/dz, dS/dt)` of [`smooth_soft_threshold`].
pub fn smooth_soft_threshold_grad(z: f64, t: f64, b: f64) -> (f64, f64) {
    let (m, p) = (z - t, z + t);
    let (qm, qp) = (m / (m * m + b).sqrt(), p / (p * p + b).sqrt());
    (1.0 + 0.5 * (qm - qp), -0.5 * (qm + qp))
}

/// Which shrinkage the denoiser applies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shrinkage {
    /// The smooth surrogate with parameter `b`; used whenever gradients are
    /// needed.
    Smooth { b: f64 },
    /// Exact soft thresholding; inference and baselines only.
    Exact,
}

impl Shrinkage {
    #[inline]
    pub fn apply(self, z: f64, t: f64) -> f64 {
        match self {
            Shrinkage::Smooth { b } => smooth_shrink(z, t, b),
            Shrinkage::Exact => exact_shrink(z, t),
        }
    }

    /// `(dS/dz, dS/dt)`; the exact variant uses the almost-everywhere
    /// derivative.
    #[inline]
    pub fn grad(self, z: f64, t: f64) -> (f64, f64) {
        match self {
            Shrinkage::Smooth { b } => smooth_soft_threshold_grad(z, t, b),
            Shrinkage::Exact => {
                if z > t {
                    (1.0, -1.0)
                } else if z < -t {
                    (1.0, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
        }
    }
}

/// The trainable parameter set: `K` real kernels of side `k_f` plus the raw
/// (pre-Soft-Plus) regularization scalars.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    k: usize,
    kf: usize,
    filters: Vec<f64>,
    pub alpha_raw: f64,
    pub lambda_raw: f64,
    smooth_b: f64,
}

impl FilterBank {
    pub fn new(k: usize, kf: usize, filters: Vec<f64>, alpha_raw: f64, lambda_raw: f64, smooth_b: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("filter bank needs at least one filter".into()));
        }
        if kf == 0 || kf.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("kernel side must be odd, got {kf}")));
        }
        if filters.len() != k * kf * kf * kf {
            return Err(shape_mismatch(k * kf * kf * kf, filters.len()));
        }
        if !(smooth_b > 0.0) {
            return Err(Error::InvalidArgument(format!("smooth_b must be positive, got {smooth_b}")));
        }
        if !alpha_raw.is_finite() || !lambda_raw.is_finite() || filters.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("filter bank parameters".into()));
        }
        Ok(Self {
            k,
            kf,
            filters,
            alpha_raw,
            lambda_raw,
            smooth_b,
        })
    }

    /// Seeded uniform initialization in `[-s, s]`, `s = 1/sqrt(K k_f^3)`,
    /// with `alpha = 0.1` and `lambda = 1`.
    pub fn random(k: usize, kf: usize, seed: u64) -> Result<Self> {
        let n = k * kf * kf * kf;
        let s = 1.0 / (n as f64).sqrt();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let filters = (0..n).map(|_| rng.random_range(-s..=s)).collect();
        Self::with_default_scalars(k, kf, filters)
    }

    pub fn with_default_scalars(k: usize, kf: usize, filters: Vec<f64>) -> Result<Self> {
        Self::new(
            k,
            kf,
            filters,
            inverse_softplus(0.1),
            inverse_softplus(1.0),
            DEFAULT_SMOOTH_B,
        )
    }

    pub fn zeros(k: usize, kf: usize) -> Result<Self> {
        Self::with_default_scalars(k, kf, vec![0.0; k * kf * kf * kf])
    }

    /// A single centered delta kernel.
    pub fn delta(kf: usize) -> Result<Self> {
        let mut filters = vec![0.0; kf * kf * kf];
        let c = kf / 2;
        filters[(c * kf + c) * kf + c] = 1.0;
        Self::with_default_scalars(1, kf, filters)
    }

    pub fn n_filters(&self) -> usize {
        self.k
    }

    pub fn kernel_side(&self) -> usize {
        self.kf
    }

    pub fn kernel_len(&self) -> usize {
        self.kf * self.kf * self.kf
    }

    pub fn kernel(&self, k: usize) -> &[f64] {
        let n = self.kernel_len();
        &self.filters[k * n..(k + 1) * n]
    }

    pub fn filters(&self) -> &[f64] {
        &self.filters
    }

    pub fn filters_mut(&mut self) -> &mut [f64] {
        &mut self.filters
    }

    pub fn smooth_b(&self) -> f64 {
        self.smooth_b
    }

    pub fn set_smooth_b(&mut self, b: f64) -> Result<()> {
        if !(b > 0.0) {
            return Err(Error::InvalidArgument(format!("smooth_b must be positive, got {b}")));
        }
        self.smooth_b = b;
        Ok(())
    }

    pub fn alpha(&self) -> f64 {
        softplus(self.alpha_raw)
    }

    pub fn lambda(&self) -> f64 {
        softplus(self.lambda_raw)
    }

    pub fn threshold(&self) -> f64 {
        self.alpha() / self.lambda()
    }

    pub fn smooth(&self) -> Shrinkage {
        Shrinkage::Smooth { b: self.smooth_b }
    }

    /// Number of trainable scalars: `K k_f^3 + 2`.
    pub fn n_parameters(&self) -> usize {
        self.filters.len() + 2
    }

    fn meta_path(path: &Path) -> PathBuf {
        path.with_extension("json")
    }

    /// Writes `path` (SPT1, shape `[K, k_f, k_f, k_f]`) and a JSON sidecar
    /// with the same stem. `extra` entries are merged into the sidecar.
    pub fn save(&self, path: &Path, extra: Option<serde_json::Map<String, serde_json::Value>>) -> Result<()> {
        let kf = self.kf;
        io::write_real(path, &[self.k, kf, kf, kf], &self.filters)?;
        let mut meta = serde_json::to_value(FilterBankMeta {
            alpha_raw: self.alpha_raw,
            lambda_raw: self.lambda_raw,
            smooth_b: self.smooth_b,
        })?;
        if let (Some(extra), Some(obj)) = (extra, meta.as_object_mut()) {
            obj.extend(extra);
        }
        io::write_json(&Self::meta_path(path), &meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (shape, data) = io::read(path)?.into_real()?;
        let [k, a, b, c]: [usize; 4] = shape
            .as_slice()
            .try_into()
            .map_err(|_| Error::Format(format!("filter bank must be 4-D, found {shape:?}")))?;
        if a != b || b != c {
            return Err(Error::Format(format!("kernels must be cubic, found {shape:?}")));
        }
        let meta: serde_json::Value = io::read_json(&Self::meta_path(path))?;
        let meta: FilterBankMeta = serde_json::from_value(meta)?;
        Self::new(k, a, data, meta.alpha_raw, meta.lambda_raw, meta.smooth_b)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FilterBankMeta {
    alpha_raw: f64,
    lambda_raw: f64,
    smooth_b: f64,
}

fn check_kernel(kf: usize, h: &[f64]) -> Result<()> {
    if kf.is_multiple_of(2) || h.len() != kf * kf * kf {
        return Err(Error::InvalidArgument(format!(
            "kernel must be an odd cube, got side {kf} with {} entries",
            h.len()
        )));
    }
    // taps alias circularly when the kernel is longer than an axis
    Ok(())
}

/// Kernel taps as `(flat kernel index, dx, dy, dt)` offsets from the center.
fn taps(kf: usize) -> impl Iterator<Item = (usize, isize, isize, isize)> {
    let c = (kf / 2) as isize;
    (0..kf).flat_map(move |a| {
        (0..kf).flat_map(move |b| {
            (0..kf).map(move |d| ((a * kf + b) * kf + d, a as isize - c, b as isize - c, d as isize - c))
        })
    })
}

#[inline]
fn wrap(i: usize, d: isize, n: usize) -> usize {
    (i as isize - d).rem_euclid(n as isize) as usize
}

/// `dst(p) += coef * src(p - d)` with circular wrap.
fn shifted_axpy(shape: Shape, src: &[f64], d: (isize, isize, isize), coef: f64, dst: &mut [f64]) {
    let Shape { nx, ny, nt } = shape;
    let sy = (d.1.rem_euclid(ny as isize)) as usize;
    for t in 0..nt {
        let ts = wrap(t, d.2, nt);
        for x in 0..nx {
            let xs = wrap(x, d.0, nx);
            let out = &mut dst[(t * nx + x) * ny..(t * nx + x + 1) * ny];
            let row = &src[(ts * nx + xs) * ny..(ts * nx + xs + 1) * ny];
            // out[y] += row[y - sy]
            let (head, tail) = out.split_at_mut(sy);
            for (o, r) in tail.iter_mut().zip(row) {
                *o += coef * r;
            }
            for (o, r) in head.iter_mut().zip(&row[ny - sy..]) {
                *o += coef * r;
            }
        }
    }
}

/// `sum_p v(p) u(p - d)` with circular wrap.
fn shifted_dot(shape: Shape, u: &[f64], v: &[f64], d: (isize, isize, isize)) -> f64 {
    let Shape { nx, ny, nt } = shape;
    let sy = (d.1.rem_euclid(ny as isize)) as usize;
    let mut acc = 0.0;
    for t in 0..nt {
        let ts = wrap(t, d.2, nt);
        for x in 0..nx {
            let xs = wrap(x, d.0, nx);
            let vr = &v[(t * nx + x) * ny..(t * nx + x + 1) * ny];
            let ur = &u[(ts * nx + xs) * ny..(ts * nx + xs + 1) * ny];
            let (head, tail) = vr.split_at(sy);
            acc += tail.iter().zip(ur).map(|(a, b)| a * b).sum::<f64>();
            acc += head.iter().zip(&ur[ny - sy..]).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    acc
}

/// Circular 3-D convolution `h * u` of one real volume.
pub fn conv3_circular(u: &[f64], shape: Shape, h: &[f64], kf: usize) -> Result<Vec<f64>> {
    check_kernel(kf, h)?;
    if u.len() != shape.len() {
        return Err(shape_mismatch(shape.len(), u.len()));
    }
    let mut out = vec![0.0; u.len()];
    conv_accumulate(u, shape, h, kf, false, &mut out);
    Ok(out)
}

/// Adjoint of [`conv3_circular`]: convolution with the index-reversed kernel.
pub fn conv3_circular_transpose(v: &[f64], shape: Shape, h: &[f64], kf: usize) -> Result<Vec<f64>> {
    check_kernel(kf, h)?;
    if v.len() != shape.len() {
        return Err(shape_mismatch(shape.len(), v.len()));
    }
    let mut out = vec![0.0; v.len()];
    conv_accumulate(v, shape, h, kf, true, &mut out);
    Ok(out)
}

pub(crate) fn conv_accumulate(u: &[f64], shape: Shape, h: &[f64], kf: usize, transpose: bool, out: &mut [f64]) {
    for (i, dx, dy, dt) in taps(kf) {
        if h[i] == 0.0 {
            continue;
        }
        let d = if transpose { (-dx, -dy, -dt) } else { (dx, dy, dt) };
        shifted_axpy(shape, u, d, h[i], out);
    }
}

/// Gradient of `<h * u, g>` with respect to `h`, accumulated into `dh`.
/// The same routine gives the kernel gradient of `<h^T * g, u>`.
pub(crate) fn kernel_grad_accumulate(u: &[f64], g: &[f64], shape: Shape, kf: usize, dh: &mut [f64]) {
    for (i, dx, dy, dt) in taps(kf) {
        dh[i] += shifted_dot(shape, u, g, (dx, dy, dt));
    }
}

/// Pre-threshold filter responses `h_k * x_c`, indexed `[channel][filter]`.
pub type Responses = Vec<Vec<Vec<f64>>>;

/// Applies the denoising step and optionally returns the filter responses
/// needed for differentiation.
pub fn denoise_with_responses(
    x: &ComplexVolume,
    fb: &FilterBank,
    shrink: Shrinkage,
    record: bool,
) -> Result<(ComplexVolume, Option<Responses>)> {
    let shape = x.shape();
    let kf = fb.kernel_side();
    check_kernel(kf, fb.kernel(0))?;
    let t = fb.threshold();
    let two = x.as_two_channel();
    let mut z = RealVolume::zeros(2, shape);
    let mut responses: Responses = Vec::new();
    for c in 0..2 {
        let u = two.channel(c);
        let mut chan = Vec::new();
        let out = z.channel_mut(c);
        for k in 0..fb.n_filters() {
            let h = fb.kernel(k);
            let mut coeff = vec![0.0; u.len()];
            conv_accumulate(u, shape, h, kf, false, &mut coeff);
            let s: Vec<f64> = coeff.iter().map(|&v| shrink.apply(v, t)).collect();
            conv_accumulate(&s, shape, h, kf, true, out);
            if record {
                chan.push(coeff);
            }
        }
        if record {
            responses.push(chan);
        }
    }
    let z = ComplexVolume::from_two_channel(&z)?;
    Ok((z, record.then_some(responses)))
}

/// `z = sum_k h_k^T * S(h_k * x)` on the real and imaginary channels with
/// shared filters.
pub fn denoise_step(x: &ComplexVolume, fb: &FilterBank, shrink: Shrinkage) -> Result<ComplexVolume> {
    Ok(denoise_with_responses(x, fb, shrink, false)?.0)
}

/// `sum_k h_k^T * h_k * u` on both channels.
pub fn filter_gram(x: &ComplexVolume, fb: &FilterBank) -> Result<ComplexVolume> {
    let shape = x.shape();
    let kf = fb.kernel_side();
    check_kernel(kf, fb.kernel(0))?;
    let two = x.as_two_channel();
    let mut out = RealVolume::zeros(2, shape);
    for c in 0..2 {
        let u = two.channel(c);
        let dst = out.channel_mut(c);
        for k in 0..fb.n_filters() {
            let h = fb.kernel(k);
            let mut coeff = vec![0.0; u.len()];
            conv_accumulate(u, shape, h, kf, false, &mut coeff);
            conv_accumulate(&coeff, shape, h, kf, true, dst);
        }
    }
    ComplexVolume::from_two_channel(&out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_real(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn random_complex(shape: Shape, seed: u64) -> ComplexVolume {
        let re = random_real(shape.len(), seed);
        let im = random_real(shape.len(), seed ^ 0xabcdef);
        ComplexVolume::from_vec(shape, re.into_iter().zip(im).map(|(a, b)| Complex64::new(a, b)).collect()).unwrap()
    }

    /// Brute-force modular-index convolution.
    fn brute_conv(u: &[f64], s: Shape, h: &[f64], kf: usize) -> Vec<f64> {
        let c = (kf / 2) as isize;
        let mut out = vec![0.0; u.len()];
        for t in 0..s.nt {
            for x in 0..s.nx {
                for y in 0..s.ny {
                    let mut acc = 0.0;
                    for a in 0..kf {
                        for b in 0..kf {
                            for d in 0..kf {
                                let xs = (x as isize - (a as isize - c)).rem_euclid(s.nx as isize) as usize;
                                let ys = (y as isize - (b as isize - c)).rem_euclid(s.ny as isize) as usize;
                                let ts = (t as isize - (d as isize - c)).rem_euclid(s.nt as isize) as usize;
                                acc += h[(a * kf + b) * kf + d] * u[s.index(xs, ys, ts)];
                            }
                        }
                    }
                    out[s.index(x, y, t)] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn delta_and_box_kernels() {
        let s = Shape::new(5, 4, 3);
        let u = random_real(s.len(), 1);
        let fb = FilterBank::delta(3).unwrap();
        assert_eq!(conv3_circular(&u, s, fb.kernel(0), 3).unwrap(), u);
        assert_eq!(conv3_circular_transpose(&u, s, fb.kernel(0), 3).unwrap(), u);

        let c = 0.7;
        let out = conv3_circular(&vec![c; s.len()], s, &[1.0; 27], 3).unwrap();
        assert!(out.iter().all(|v| (v - 27.0 * c).abs() < 1e-12));
    }

    #[test]
    fn matches_brute_force() {
        let s = Shape::new(5, 4, 3);
        let u = random_real(s.len(), 2);
        let h = random_real(27, 3);
        let fast = conv3_circular(&u, s, &h, 3).unwrap();
        let slow = brute_conv(&u, s, &h, 3);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn transpose_is_adjoint_and_reversed_kernel() {
        let s = Shape::new(6, 6, 4);
        let u = random_real(s.len(), 4);
        let v = random_real(s.len(), 5);
        let h = random_real(27, 6);
        let hu = conv3_circular(&u, s, &h, 3).unwrap();
        let htv = conv3_circular_transpose(&v, s, &h, 3).unwrap();
        let lhs: f64 = hu.iter().zip(&v).map(|(a, b)| a * b).sum();
        let rhs: f64 = u.iter().zip(&htv).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));

        let reversed: Vec<f64> = h.iter().rev().copied().collect();
        let via_rev = conv3_circular(&v, s, &reversed, 3).unwrap();
        for (a, b) in htv.iter().zip(&via_rev) {
            assert!((a - b).abs() < 1e-13);
        }

        let mut sym = h.clone();
        for i in 0..27 {
            sym[i] = h[i] + h[26 - i];
        }
        let fwd = conv3_circular(&u, s, &sym, 3).unwrap();
        let adj = conv3_circular_transpose(&u, s, &sym, 3).unwrap();
        for (a, b) in fwd.iter().zip(&adj) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn short_axes_alias_circularly() {
        let s = Shape::new(5, 2, 1);
        let u = random_real(s.len(), 9);
        let h = random_real(125, 10);
        let fast = conv3_circular(&u, s, &h, 5).unwrap();
        for (a, b) in fast.iter().zip(&brute_conv(&u, s, &h, 5)) {
            assert!((a - b).abs() < 1e-13);
        }
        assert!(conv3_circular(&[0.0; 4], Shape::new(2, 2, 1), &[1.0, 0.0], 2).is_err());
    }

    #[test]
    fn shift_equivariance() {
        let s = Shape::new(6, 5, 4);
        let u = random_real(s.len(), 7);
        let h = random_real(27, 8);
        let shift = |v: &[f64]| {
            let mut out = vec![0.0; v.len()];
            for t in 0..s.nt {
                for x in 0..s.nx {
                    for y in 0..s.ny {
                        out[s.index((x + 2) % s.nx, (y + 1) % s.ny, (t + 3) % s.nt)] = v[s.index(x, y, t)];
                    }
                }
            }
            out
        };
        let a = conv3_circular(&shift(&u), s, &h, 3).unwrap();
        let b = shift(&conv3_circular(&u, s, &h, 3).unwrap());
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-13);
        }
    }

    #[test]
    fn soft_threshold_values() {
        assert_eq!(soft_threshold(3.0, 1.0).unwrap(), 2.0);
        assert_eq!(soft_threshold(0.5, 1.0).unwrap(), 0.0);
        assert_eq!(soft_threshold(-3.0, 1.0).unwrap(), -2.0);
        assert!(soft_threshold(1.0, -0.1).is_err());
        assert!(smooth_soft_threshold(1.0, 0.1, 0.0).is_err());
        assert_eq!(smooth_soft_threshold(0.0, 0.7, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn smooth_threshold_within_sqrt_b() {
        let (t, b) = (0.5, 0.001);
        let worst = (0..=100_000)
            .map(|i| -5.0 + 10.0 * i as f64 / 100_000.0)
            .map(|z| (smooth_soft_threshold(z, t, b).unwrap() - soft_threshold(z, t).unwrap()).abs())
            .fold(0.0, f64::max);
        assert!(worst <= b.sqrt(), "max deviation {worst}");
    }

    #[test]
    fn smooth_threshold_converges_as_b_vanishes() {
        let worst = (0..=2000)
            .map(|i| -2.0 + 4.0 * i as f64 / 2000.0)
            .map(|z| (smooth_soft_threshold(z, 0.3, 1e-8).unwrap() - soft_threshold(z, 0.3).unwrap()).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-4);
    }

    #[test]
    fn smooth_threshold_derivatives_match_finite_differences() {
        let (z, t, b) = (0.3, 0.2, 0.001);
        let (dz, dt) = smooth_soft_threshold_grad(z, t, b);
        let h = 1e-6;
        let f = |z: f64, t: f64| smooth_soft_threshold(z, t, b).unwrap();
        let fd_z = (f(z + h, t) - f(z - h, t)) / (2.0 * h);
        let fd_t = (f(z, t + h) - f(z, t - h)) / (2.0 * h);
        assert!((dz - fd_z).abs() <= 1e-6 * dz.abs());
        assert!((dt - fd_t).abs() <= 1e-6 * dt.abs());
    }

    #[test]
    fn softplus_round_trip() {
        for v in [1e-6, 0.1, 1.0, 5.0, 40.0] {
            assert!((softplus(inverse_softplus(v)) - v).abs() < 1e-12 * v.max(1.0));
        }
        assert!((logistic(0.0) - 0.5).abs() < 1e-15);
        let r = 0.37;
        let fd = (softplus(r + 1e-6) - softplus(r - 1e-6)) / 2e-6;
        assert!((fd - logistic(r)).abs() < 1e-9);
    }

    #[test]
    fn denoise_degenerate_filters() {
        let s = Shape::new(4, 4, 3);
        let x = random_complex(s, 9);
        let zero = FilterBank::zeros(2, 3).unwrap();
        assert_eq!(denoise_step(&x, &zero, zero.smooth()).unwrap().norm(), 0.0);

        let mut delta = FilterBank::delta(3).unwrap();
        // threshold 0 via a tiny alpha in exact mode
        delta.alpha_raw = -800.0;
        let z = denoise_step(&x, &delta, Shrinkage::Exact).unwrap();
        assert_eq!(z, x);

        let delta = FilterBank::delta(3).unwrap();
        let t = delta.threshold();
        let z = denoise_step(&x, &delta, delta.smooth()).unwrap();
        for (a, b) in z.as_slice().iter().zip(x.as_slice()) {
            let re = smooth_soft_threshold(b.re, t, DEFAULT_SMOOTH_B).unwrap();
            let im = smooth_soft_threshold(b.im, t, DEFAULT_SMOOTH_B).unwrap();
            assert!((a.re - re).abs() < 1e-15 && (a.im - im).abs() < 1e-15);
        }
    }

    #[test]
    fn denoise_is_odd() {
        let s = Shape::new(5, 4, 3);
        let x = random_complex(s, 10);
        let fb = FilterBank::random(3, 3, 11).unwrap();
        let a = denoise_step(&x, &fb, fb.smooth()).unwrap();
        let b = denoise_step(&x.scaled(-1.0), &fb, fb.smooth()).unwrap();
        for (p, q) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((p + q).norm() < 1e-14);
        }
    }

    #[test]
    fn filter_bank_validation_and_io() {
        assert!(FilterBank::new(0, 3, vec![], 0.0, 0.0, 0.001).is_err());
        assert!(FilterBank::new(1, 2, vec![0.0; 8], 0.0, 0.0, 0.001).is_err());
        assert!(FilterBank::new(1, 1, vec![0.0], 0.0, 0.0, 0.0).is_err());
        let fb = FilterBank::random(4, 3, 12).unwrap();
        assert_eq!(fb.n_parameters(), 4 * 27 + 2);
        assert!((fb.alpha() - 0.1).abs() < 1e-12 && (fb.lambda() - 1.0).abs() < 1e-12);
        let bound = 1.0 / (4.0f64 * 27.0).sqrt();
        assert!(fb.filters().iter().all(|v| v.abs() <= bound));

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("fb.spt");
        fb.save(&p, None).unwrap();
        assert_eq!(FilterBank::load(&p).unwrap(), fb);
        let meta: serde_json::Value = io::read_json(&dir.path().join("fb.json")).unwrap();
        assert!(meta.get("alpha_raw").is_some() && meta.get("smooth_b").is_some());
    }

    proptest! {
        #[test]
        fn convolution_is_linear(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let s = Shape::new(4, 3, 3);
            let u = random_real(s.len(), seed);
            let v = random_real(s.len(), seed.wrapping_add(1));
            let h = random_real(27, seed.wrapping_add(2));
            let comb: Vec<f64> = u.iter().zip(&v).map(|(p, q)| a * p + b * q).collect();
            let lhs = conv3_circular(&comb, s, &h, 3).unwrap();
            let cu = conv3_circular(&u, s, &h, 3).unwrap();
            let cv = conv3_circular(&v, s, &h, 3).unwrap();
            for i in 0..lhs.len() {
                prop_assert!((lhs[i] - (a * cu[i] + b * cv[i])).abs() < 1e-12);
            }
        }

        #[test]
        fn exact_shrink_is_odd_and_nonexpansive(z in -10.0f64..10.0, w in -10.0f64..10.0, t in 0.0f64..5.0) {
            prop_assert_eq!(soft_threshold(-z, t).unwrap(), -soft_threshold(z, t).unwrap());
            let d = (soft_threshold(z, t).unwrap() - soft_threshold(w, t).unwrap()).abs();
            prop_assert!(d <= (z - w).abs() + 1e-15);
        }
    }
}
