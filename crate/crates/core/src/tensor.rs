//! Dense complex and real volumes.
//!
//! Storage is row-major with time as the slowest axis: element `(x, y, t)` of
//! a volume with shape `(nx, ny, nt)` lives at `t * nx * ny + x * ny + y`.
//! Real volumes add a leading channel axis: `(c, x, y, t)` lives at
//! `c * nx * ny * nt + t * nx * ny + x * ny + y`.

use num_complex::Complex64;

use crate::error::{shape_mismatch, Result};

/// Spatial-temporal extent of a dynamic image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Shape {
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
}

impl Shape {
    pub fn new(nx: usize, ny: usize, nt: usize) -> Self {
        Self { nx, ny, nt }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nt
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frame_len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, t: usize) -> usize {
        (t * self.nx + x) * self.ny + y
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nt]
    }
}

/// A complex-valued dynamic image.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexVolume {
    shape: Shape,
    data: Vec<Complex64>,
}

impl ComplexVolume {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![Complex64::new(0.0, 0.0); shape.len()],
        }
    }

    pub fn from_elem(shape: Shape, value: Complex64) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(shape_mismatch(shape.len(), data.len()));
        }
        Ok(Self { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for t in 0..shape.nt {
            for x in 0..shape.nx {
                for y in 0..shape.ny {
                    data.push(f(x, y, t));
                }
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize, t: usize) -> Complex64 {
        self.data[self.shape.index(x, y, t)]
    }

    pub fn set(&mut self, x: usize, y: usize, t: usize, value: Complex64) {
        let i = self.shape.index(x, y, t);
        self.data[i] = value;
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        let n = self.shape.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [Complex64] {
        let n = self.shape.frame_len();
        &mut self.data[t * n..(t + 1) * n]
    }

    /// Splits into the (real, imaginary) two-channel view.
    pub fn as_two_channel(&self) -> RealVolume {
        let n = self.len();
        let mut data = Vec::with_capacity(2 * n);
        data.extend(self.data.iter().map(|z| z.re));
        data.extend(self.data.iter().map(|z| z.im));
        RealVolume {
            channels: 2,
            shape: self.shape,
            data,
        }
    }

    pub fn from_two_channel(v: &RealVolume) -> Result<Self> {
        if v.channels != 2 {
            return Err(shape_mismatch("2 channels", v.channels));
        }
        let (re, im) = (v.channel(0), v.channel(1));
        let data = re
            .iter()
            .zip(im)
            .map(|(&a, &b)| Complex64::new(a, b))
            .collect();
        Ok(Self {
            shape: v.shape,
            data,
        })
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(shape_mismatch(self.shape, other.shape));
        }
        Ok(())
    }

    /// `sum(conj(self_i) * other_i)`.
    pub fn inner(&self, other: &Self) -> Result<Complex64> {
        self.check_same_shape(other)?;
        Ok(inner_slices(&self.data, &other.data))
    }

    /// `Re <self, other>`, the inner product of the two-channel real view.
    pub fn real_dot(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        real_dot_slices(&self.data, &other.data)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn scale(&mut self, a: f64) {
        self.data.iter_mut().for_each(|z| *z *= a);
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(s, o)| *s += o * a);
    }

    /// `self += a * other` with a complex coefficient.
    pub fn axpy_complex(&mut self, a: Complex64, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(s, o)| *s += a * o);
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self {
            shape: self.shape,
            data,
        })
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.norm()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

pub(crate) fn inner_slices(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub(crate) fn real_dot_slices(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

/// A multi-channel real volume.
#[derive(Clone, Debug, PartialEq)]
pub struct RealVolume {
    channels: usize,
    shape: Shape,
    data: Vec<f64>,
}

impl RealVolume {
    pub fn zeros(channels: usize, shape: Shape) -> Self {
        Self {
            channels,
            shape,
            data: vec![0.0; channels * shape.len()],
        }
    }

    pub fn from_vec(channels: usize, shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * shape.len() {
            return Err(shape_mismatch(channels * shape.len(), data.len()));
        }
        Ok(Self {
            channels,
            shape,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.shape.len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.shape.len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}
