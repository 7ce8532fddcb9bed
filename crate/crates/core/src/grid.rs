//! Complex 2D grids and multi-coil stacks.

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Real-valued grid (magnitude images, weights, feature maps).
pub type RealGrid = Array2<f64>;

/// Which domain a coil stack lives in. Flipped only by `fft2c`/`ifft2c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Image,
    KSpace,
}

/// Complex-valued 2D array, row-major. Houses a single coil's k-space or
/// image content.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid {
    data: Array2<Complex64>,
}

impl ComplexGrid {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            data: Array2::zeros((height, width)),
        }
    }

    pub fn from_array(data: Array2<Complex64>) -> Self {
        Self { data }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> Complex64) -> Self {
        Self {
            data: Array2::from_shape_fn((height, width), |(i, j)| f(i, j)),
        }
    }

    /// Real grid lifted to complex with zero imaginary part.
    pub fn from_real(real: &RealGrid) -> Self {
        Self {
            data: real.mapv(|v| Complex64::new(v, 0.0)),
        }
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    pub fn array(&self) -> &Array2<Complex64> {
        &self.data
    }

    pub fn array_mut(&mut self) -> &mut Array2<Complex64> {
        &mut self.data
    }

    pub fn into_array(self) -> Array2<Complex64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[(i, j)] = v;
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self {
            data: self.data.mapv(f),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(Complex64, Complex64) -> Complex64) -> Self {
        assert_eq!(self.shape(), other.shape(), "grid shape mismatch");
        let mut out = self.data.clone();
        out.zip_mut_with(&other.data, |a, &b| *a = f(*a, b));
        Self { data: out }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    /// self + s * other, the workhorse of the sampling updates.
    pub fn axpy(&self, s: f64, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + b * s)
    }

    pub fn magnitude(&self) -> RealGrid {
        self.data.mapv(|v| v.norm())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.norm()))
    }

    /// Squared Euclidean norm over the real representation
    /// (sum of re^2 + im^2).
    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    /// Real part of the Hermitian inner product <self, other> = sum conj(a)*b.
    /// Equals the Euclidean inner product of the real representations.
    pub fn inner_re(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape(), "grid shape mismatch");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum()
    }

    /// Hermitian inner product sum conj(a)*b.
    pub fn inner(&self, other: &Self) -> Complex64 {
        assert_eq!(self.shape(), other.shape(), "grid shape mismatch");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn linf_distance(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape(), "grid shape mismatch");
        self.data
            .iter()
            .zip(other.data.iter())
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).norm()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

/// Ordered list of same-shape coils with a domain tag.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilStack {
    coils: Vec<ComplexGrid>,
    domain: Domain,
}

impl CoilStack {
    pub fn new(coils: Vec<ComplexGrid>, domain: Domain) -> Result<Self> {
        let first = coils
            .first()
            .ok_or_else(|| CoreError::InvalidInput("coil stack needs at least 1 coil".into()))?;
        let shape = first.shape();
        for c in &coils {
            if c.shape() != shape {
                return Err(CoreError::ShapeMismatch {
                    expected: shape,
                    got: c.shape(),
                });
            }
        }
        Ok(Self { coils, domain })
    }

    pub fn single(grid: ComplexGrid, domain: Domain) -> Self {
        Self {
            coils: vec![grid],
            domain,
        }
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn coils(&self) -> &[ComplexGrid] {
        &self.coils
    }

    pub fn num_coils(&self) -> usize {
        self.coils.len()
    }

    pub fn grid_shape(&self) -> (usize, usize) {
        self.coils[0].shape()
    }

    /// Apply a per-coil transform that flips the domain tag (fft2c/ifft2c).
    pub(crate) fn map_flip_domain(&self, f: impl Fn(&ComplexGrid) -> ComplexGrid) -> Self {
        let domain = match self.domain {
            Domain::Image => Domain::KSpace,
            Domain::KSpace => Domain::Image,
        };
        Self {
            coils: self.coils.iter().map(f).collect(),
            domain,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.coils.iter().fold(0.0_f64, |m, c| m.max(c.max_abs()))
    }
}

/// Root of the per-pixel sum of squared coil magnitudes; the standard coil
/// combination used for evaluation. Rejects k-space input.
pub fn sos_combine(stack: &CoilStack) -> Result<RealGrid> {
    if stack.domain() != Domain::Image {
        return Err(CoreError::DomainMisuse(
            "sos_combine requires an image-domain stack".into(),
        ));
    }
    let (h, w) = stack.grid_shape();
    let mut out = RealGrid::zeros((h, w));
    for coil in stack.coils() {
        for (o, v) in out.iter_mut().zip(coil.array().iter()) {
            *o += v.norm_sqr();
        }
    }
    out.mapv_inplace(f64::sqrt);
    Ok(out)
}
