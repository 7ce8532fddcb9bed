//! Synthetic ellipse phantoms with simulated coil sensitivities.
//!
//! Desk-scale stand-in for clinical data: piecewise-smooth magnitude in
//! [0, 1] with background exactly zero, an optional smooth complex phase,
//! and Gaussian-lobe coil profiles normalized so the per-pixel sum of
//! squared sensitivities is one.

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::grid::{CoilStack, ComplexGrid, Domain, RealGrid};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhantomKind {
    /// Randomized ellipse family: one outer hull plus interior structures.
    Ellipses,
}

impl std::str::FromStr for PhantomKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ellipses" => Ok(PhantomKind::Ellipses),
            other => Err(CoreError::InvalidInput(format!(
                "unknown phantom kind '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PhantomConfig {
    pub kind: PhantomKind,
    pub shape: (usize, usize),
    pub coils: usize,
    /// Multiply the magnitude image by a smooth synthetic phase.
    pub with_phase: bool,
}

impl PhantomConfig {
    pub fn new(shape: (usize, usize)) -> Self {
        Self {
            kind: PhantomKind::Ellipses,
            shape,
            coils: 1,
            with_phase: true,
        }
    }

    pub fn with_coils(mut self, coils: usize) -> Self {
        self.coils = coils;
        self
    }

    pub fn with_phase(mut self, with_phase: bool) -> Self {
        self.with_phase = with_phase;
        self
    }
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    theta: f64,
    intensity: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.theta.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

/// Magnitude image in [0, 1] with background exactly zero.
fn magnitude_image(h: usize, w: usize, rng: &mut impl Rng) -> RealGrid {
    // Coordinates in [-1, 1].
    let outer = Ellipse {
        cx: rng.random_range(-0.05..0.05),
        cy: rng.random_range(-0.05..0.05),
        a: rng.random_range(0.72..0.88),
        b: rng.random_range(0.62..0.82),
        theta: rng.random_range(-0.3..0.3),
        intensity: rng.random_range(0.85..1.0),
    };
    let inner = Ellipse {
        cx: outer.cx,
        cy: outer.cy,
        a: outer.a * 0.92,
        b: outer.b * 0.92,
        theta: outer.theta,
        intensity: -rng.random_range(0.15..0.3),
    };
    let n_structures = rng.random_range(4..9);
    let mut structures = Vec::with_capacity(n_structures);
    for _ in 0..n_structures {
        structures.push(Ellipse {
            cx: rng.random_range(-0.45..0.45),
            cy: rng.random_range(-0.45..0.45),
            a: rng.random_range(0.05..0.3),
            b: rng.random_range(0.05..0.3),
            theta: rng.random_range(0.0..std::f64::consts::PI),
            intensity: rng.random_range(-0.4..0.5),
        });
    }

    Array2::from_shape_fn((h, w), |(i, j)| {
        let y = 2.0 * (i as f64 + 0.5) / h as f64 - 1.0;
        let x = 2.0 * (j as f64 + 0.5) / w as f64 - 1.0;
        if !outer.contains(x, y) {
            return 0.0;
        }
        let mut v = outer.intensity;
        if inner.contains(x, y) {
            v += inner.intensity;
        }
        for e in &structures {
            if e.contains(x, y) {
                v += e.intensity;
            }
        }
        v.clamp(0.0, 1.0)
    })
}

/// Smooth low-order polynomial phase over the field of view.
fn phase_map(h: usize, w: usize, rng: &mut impl Rng) -> RealGrid {
    let a = rng.random_range(-1.5..1.5);
    let b = rng.random_range(-1.5..1.5);
    let c = rng.random_range(-0.8..0.8);
    let d = rng.random_range(-0.6..0.6);
    Array2::from_shape_fn((h, w), |(i, j)| {
        let y = 2.0 * (i as f64 + 0.5) / h as f64 - 1.0;
        let x = 2.0 * (j as f64 + 0.5) / w as f64 - 1.0;
        a * x + b * y + c * x * y + d * (x * x - y * y)
    })
}

/// Gaussian-lobe coil sensitivities, SOS-normalized per pixel.
pub fn coil_sensitivities(h: usize, w: usize, coils: usize) -> Vec<RealGrid> {
    if coils == 1 {
        return vec![Array2::from_elem((h, w), 1.0)];
    }
    let tau = 0.9_f64;
    let mut maps: Vec<RealGrid> = (0..coils)
        .map(|c| {
            let angle = 2.0 * std::f64::consts::PI * c as f64 / coils as f64;
            let (cy, cx) = (0.75 * angle.sin(), 0.75 * angle.cos());
            Array2::from_shape_fn((h, w), |(i, j)| {
                let y = 2.0 * (i as f64 + 0.5) / h as f64 - 1.0;
                let x = 2.0 * (j as f64 + 0.5) / w as f64 - 1.0;
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                (-d2 / (2.0 * tau * tau)).exp()
            })
        })
        .collect();
    for i in 0..h {
        for j in 0..w {
            let norm: f64 = maps.iter().map(|m| m[(i, j)] * m[(i, j)]).sum::<f64>().sqrt();
            for m in maps.iter_mut() {
                m[(i, j)] /= norm;
            }
        }
    }
    maps
}

/// Generate a multi-coil image-domain phantom.
pub fn make_phantom(cfg: &PhantomConfig, seed: u64) -> Result<CoilStack> {
    let (h, w) = cfg.shape;
    if h < 32 || w < 32 {
        return Err(CoreError::InvalidInput(format!(
            "phantom shape must be at least 32x32, got {h}x{w}"
        )));
    }
    if cfg.coils == 0 {
        return Err(CoreError::InvalidInput("phantom needs at least one coil".into()));
    }
    let PhantomKind::Ellipses = cfg.kind;

    let mut rng = substream(seed, "phantom");
    let mag = magnitude_image(h, w, &mut rng);
    let phase = if cfg.with_phase {
        Some(phase_map(h, w, &mut rng))
    } else {
        None
    };
    let object = ComplexGrid::from_fn(h, w, |i, j| {
        let m = mag[(i, j)];
        match &phase {
            Some(p) => Complex64::from_polar(m, p[(i, j)]),
            None => Complex64::new(m, 0.0),
        }
    });

    let sens = coil_sensitivities(h, w, cfg.coils);
    let coils = sens
        .iter()
        .map(|s| {
            ComplexGrid::from_fn(h, w, |i, j| object.get(i, j) * s[(i, j)])
        })
        .collect();
    CoilStack::new(coils, Domain::Image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::sos_combine;

    #[test]
    fn values_bounded_and_background_zero() {
        for seed in [0, 5, 99] {
            let stack = make_phantom(&PhantomConfig::new((64, 64)), seed).unwrap();
            let sos = sos_combine(&stack).unwrap();
            for v in sos.iter() {
                assert!((0.0..=1.0 + 1e-12).contains(v));
            }
            // Corners are outside the outer hull.
            assert_eq!(sos[(0, 0)], 0.0);
            assert_eq!(sos[(0, 63)], 0.0);
            assert_eq!(sos[(63, 0)], 0.0);
        }
    }

    #[test]
    fn sensitivities_sos_normalized() {
        let maps = coil_sensitivities(48, 48, 4);
        for i in 0..48 {
            for j in 0..48 {
                let s: f64 = maps.iter().map(|m| m[(i, j)] * m[(i, j)]).sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn different_seeds_differ() {
        let a = make_phantom(&PhantomConfig::new((64, 64)), 1).unwrap();
        let b = make_phantom(&PhantomConfig::new((64, 64)), 2).unwrap();
        assert!(a.coils()[0].linf_distance(&b.coils()[0]) > 1e-6);
    }

    #[test]
    fn same_seed_identical() {
        let a = make_phantom(&PhantomConfig::new((64, 64)).with_coils(4), 7).unwrap();
        let b = make_phantom(&PhantomConfig::new((64, 64)).with_coils(4), 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn small_shapes_rejected() {
        assert!(make_phantom(&PhantomConfig::new((16, 64)), 0).is_err());
    }
}
