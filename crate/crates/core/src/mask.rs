//! Under-sampling mask generation for the acquisition patterns used in the
//! reconstruction experiments.
//!
//! Phase-encode lines run along axis 0 (rows); the 1D patterns select whole
//! rows. All patterns force a fully sampled calibration region at the
//! k-space center and are deterministic given the seed.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskPattern {
    /// Variable-density blue noise: dart throwing with a radius growing
    /// with distance from the k-space center, bisected to the target rate.
    Poisson,
    /// Uniformly random points, exact count.
    Random2D,
    /// Uniformly random phase-encode lines, exact count.
    Uniform1D,
    /// Every ceil(R)-th phase-encode line plus calibration; the sampled
    /// fraction exceeds 1/R by the calibration overhead.
    Equispaced1D,
    /// Evenly spread lines with the count adjusted so the net fraction
    /// (calibration included) matches 1/R.
    Cartesian1D,
}

impl MaskPattern {
    pub fn as_str(&self) -> &'static str {
        match self {
            MaskPattern::Poisson => "poisson",
            MaskPattern::Random2D => "random2d",
            MaskPattern::Uniform1D => "uniform1d",
            MaskPattern::Equispaced1D => "equispaced1d",
            MaskPattern::Cartesian1D => "cartesian1d",
        }
    }
}

impl std::str::FromStr for MaskPattern {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "poisson" => MaskPattern::Poisson,
            "random2d" | "random" => MaskPattern::Random2D,
            "uniform1d" | "uniform" => MaskPattern::Uniform1D,
            "equispaced1d" | "equispaced" => MaskPattern::Equispaced1D,
            "cartesian1d" | "cartesian" => MaskPattern::Cartesian1D,
            other => {
                return Err(CoreError::InvalidInput(format!(
                    "unknown mask pattern '{other}'"
                )))
            }
        })
    }
}

/// Binary acquisition pattern with its generation metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMask {
    pub omega: Array2<bool>,
    pub pattern: MaskPattern,
    pub accel: f64,
    pub calib: usize,
    pub seed: u64,
}

impl SamplingMask {
    pub fn shape(&self) -> (usize, usize) {
        self.omega.dim()
    }

    pub fn sampled(&self) -> usize {
        self.omega.iter().filter(|v| **v).count()
    }

    pub fn fraction(&self) -> f64 {
        self.sampled() as f64 / self.omega.len() as f64
    }
}

/// Rows covered by a centered calibration block of `calib` lines.
fn calib_rows(height: usize, calib: usize) -> std::ops::Range<usize> {
    let c = height / 2;
    let start = c.saturating_sub(calib / 2);
    start..(start + calib).min(height)
}

fn calib_block(height: usize, width: usize, calib: usize) -> Array2<bool> {
    let rows = calib_rows(height, calib);
    let cols = calib_rows(width, calib);
    Array2::from_shape_fn((height, width), |(i, j)| rows.contains(&i) && cols.contains(&j))
}

/// Generate an acquisition mask for `shape = (height, width)` at
/// acceleration R with a centered always-sampled calibration region.
pub fn make_mask(
    pattern: MaskPattern,
    shape: (usize, usize),
    accel: f64,
    calib: usize,
    seed: u64,
) -> Result<SamplingMask> {
    let (h, w) = shape;
    if h == 0 || w == 0 {
        return Err(CoreError::InvalidInput("mask needs a nonempty grid".into()));
    }
    if !(accel >= 1.0) {
        return Err(CoreError::InvalidInput(format!(
            "acceleration factor must be >= 1, got {accel}"
        )));
    }
    if calib > h.min(w) {
        return Err(CoreError::InfeasibleMask(format!(
            "calibration size {calib} exceeds grid {h}x{w}"
        )));
    }

    let omega = if accel == 1.0 {
        Array2::from_elem((h, w), true)
    } else {
        match pattern {
            MaskPattern::Poisson => poisson_mask(h, w, accel, calib, seed)?,
            MaskPattern::Random2D => random2d_mask(h, w, accel, calib, seed)?,
            MaskPattern::Uniform1D => uniform_lines_mask(h, w, accel, calib, seed)?,
            MaskPattern::Equispaced1D => equispaced_lines_mask(h, w, accel, calib, seed),
            MaskPattern::Cartesian1D => cartesian_lines_mask(h, w, accel, calib)?,
        }
    };

    Ok(SamplingMask {
        omega,
        pattern,
        accel,
        calib,
        seed,
    })
}

fn target_points(total: usize, accel: f64) -> usize {
    ((total as f64 / accel).round() as usize).max(1)
}

fn random2d_mask(h: usize, w: usize, accel: f64, calib: usize, seed: u64) -> Result<Array2<bool>> {
    let mut omega = calib_block(h, w, calib);
    let calib_count = omega.iter().filter(|v| **v).count();
    let target = target_points(h * w, accel);
    if calib_count > target {
        return Err(CoreError::InfeasibleMask(format!(
            "calibration block ({calib_count} samples) alone exceeds the 1/R budget ({target})"
        )));
    }
    let mut free: Vec<(usize, usize)> = Vec::with_capacity(h * w - calib_count);
    for i in 0..h {
        for j in 0..w {
            if !omega[(i, j)] {
                free.push((i, j));
            }
        }
    }
    let mut rng = substream(seed, "mask/random2d");
    let (chosen, _) = free.partial_shuffle(&mut rng, target - calib_count);
    for &(i, j) in chosen.iter() {
        omega[(i, j)] = true;
    }
    Ok(omega)
}

fn uniform_lines_mask(h: usize, w: usize, accel: f64, calib: usize, seed: u64) -> Result<Array2<bool>> {
    let rows = calib_rows(h, calib);
    let target_lines = ((h as f64 / accel).round() as usize).max(1);
    if rows.len() > target_lines {
        return Err(CoreError::InfeasibleMask(format!(
            "calibration lines ({}) alone exceed the 1/R line budget ({target_lines})",
            rows.len()
        )));
    }
    let mut free: Vec<usize> = (0..h).filter(|i| !rows.contains(i)).collect();
    let mut rng = substream(seed, "mask/uniform1d");
    let extra = target_lines - rows.len();
    let (chosen, _) = free.partial_shuffle(&mut rng, extra);
    let mut line = vec![false; h];
    for i in rows {
        line[i] = true;
    }
    for &i in chosen.iter() {
        line[i] = true;
    }
    Ok(Array2::from_shape_fn((h, w), |(i, _)| line[i]))
}

fn equispaced_lines_mask(h: usize, w: usize, accel: f64, calib: usize, seed: u64) -> Array2<bool> {
    let stride = (accel.ceil() as usize).max(1);
    let mut rng = substream(seed, "mask/equispaced1d");
    let offset = rng.random_range(0..stride);
    let rows = calib_rows(h, calib);
    let mut line = vec![false; h];
    for (i, v) in line.iter_mut().enumerate() {
        if i % stride == offset || rows.contains(&i) {
            *v = true;
        }
    }
    Array2::from_shape_fn((h, w), |(i, _)| line[i])
}

fn cartesian_lines_mask(h: usize, w: usize, accel: f64, calib: usize) -> Result<Array2<bool>> {
    let rows = calib_rows(h, calib);
    let target_lines = ((h as f64 / accel).round() as usize).max(1);
    if rows.len() > target_lines {
        return Err(CoreError::InfeasibleMask(format!(
            "calibration lines ({}) alone exceed the 1/R line budget ({target_lines})",
            rows.len()
        )));
    }
    let extra = target_lines - rows.len();
    let outside: Vec<usize> = (0..h).filter(|i| !rows.contains(i)).collect();
    let mut line = vec![false; h];
    for i in rows {
        line[i] = true;
    }
    if extra > 0 {
        for t in 0..extra {
            let pos = ((t as f64 + 0.5) * outside.len() as f64 / extra as f64) as usize;
            line[outside[pos.min(outside.len() - 1)]] = true;
        }
    }
    Ok(Array2::from_shape_fn((h, w), |(i, _)| line[i]))
}

/// Dart throwing at a given radius scale; calibration points participate in
/// the spacing constraint. Returns the mask and its sample count.
fn poisson_darts(
    h: usize,
    w: usize,
    calib: usize,
    scale: f64,
    target: usize,
    seed: u64,
    round: u64,
) -> (Array2<bool>, usize) {
    let mut omega = calib_block(h, w, calib);
    let mut count = omega.iter().filter(|v| **v).count();
    let (ch, cw) = (h as f64 / 2.0, w as f64 / 2.0);
    let max_dist = (ch * ch + cw * cw).sqrt();
    let radius = |i: usize, j: usize| -> f64 {
        let d = ((i as f64 - ch).powi(2) + (j as f64 - cw).powi(2)).sqrt() / max_dist;
        scale * (0.5 + 2.5 * d)
    };
    let mut rng = substream(seed ^ (round << 32), "mask/poisson");
    let mut misses = 0usize;
    let max_misses = 40 * (h * w);
    while count < target && misses < max_misses {
        let i = rng.random_range(0..h);
        let j = rng.random_range(0..w);
        if omega[(i, j)] {
            misses += 1;
            continue;
        }
        let r = radius(i, j);
        let ri = r.ceil() as isize;
        let mut ok = true;
        'scan: for di in -ri..=ri {
            for dj in -ri..=ri {
                let ni = i as isize + di;
                let nj = j as isize + dj;
                if ni < 0 || nj < 0 || ni >= h as isize || nj >= w as isize {
                    continue;
                }
                if omega[(ni as usize, nj as usize)]
                    && ((di * di + dj * dj) as f64) < r * r
                {
                    ok = false;
                    break 'scan;
                }
            }
        }
        if ok {
            omega[(i, j)] = true;
            count += 1;
            misses = 0;
        } else {
            misses += 1;
        }
    }
    (omega, count)
}

fn poisson_mask(h: usize, w: usize, accel: f64, calib: usize, seed: u64) -> Result<Array2<bool>> {
    let target = target_points(h * w, accel);
    let calib_count = calib_block(h, w, calib).iter().filter(|v| **v).count();
    if calib_count > target {
        return Err(CoreError::InfeasibleMask(format!(
            "calibration block ({calib_count} samples) alone exceeds the 1/R budget ({target})"
        )));
    }
    // Bisection over the radius scale; count decreases as the scale grows.
    let tol = ((target as f64) * 0.02).ceil() as usize;
    let mut lo = 0.05_f64;
    let mut hi = 8.0_f64;
    let mut best: Option<(Array2<bool>, usize)> = None;
    for round in 0..14 {
        let mid = 0.5 * (lo + hi);
        let (omega, count) = poisson_darts(h, w, calib, mid, target, seed, round);
        let better = match &best {
            None => true,
            Some((_, c)) => count.abs_diff(target) < c.abs_diff(target),
        };
        if better {
            best = Some((omega, count));
        }
        if count.abs_diff(target) <= tol {
            break;
        }
        if count < target {
            hi = mid; // too sparse, shrink radii
        } else {
            lo = mid;
        }
    }
    let (omega, count) = best.expect("at least one bisection round ran");
    if count.abs_diff(target) * 10 > target {
        return Err(CoreError::InfeasibleMask(format!(
            "poisson generation reached {count} of {target} target samples"
        )));
    }
    Ok(omega)
}
