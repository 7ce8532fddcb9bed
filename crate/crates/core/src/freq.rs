//! High-frequency prior extractors and their correlation diagnostic.
//!
//! Two operators regulate the frequency distribution of k-space data before
//! diffusion: a radial weighting (soft-threshold analogue) and a centered
//! low-frequency block mask (hard-threshold analogue).

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::fft::ifft2c;
use crate::grid::{ComplexGrid, RealGrid};

/// How grid indices map to the coordinates entering the radial weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordScale {
    /// (i - floor(H/2)) / (H/2): coordinates span [-1, 1), making
    /// (r_cut, p) resolution-independent. The default.
    Normalized,
    /// Raw centered index offsets i - floor(H/2).
    Index,
}

/// Radial weight w = max(floor, (r_cut*cx^2 + r_cut*cy^2)^p) over centered
/// coordinates. The floor keeps the DC bin invertible.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    w: RealGrid,
    r_cut: f64,
    p: f64,
    floor: f64,
    coord: CoordScale,
}

pub const DEFAULT_R_CUT: f64 = 1.0;
pub const DEFAULT_P: f64 = 0.5;
pub const DEFAULT_FLOOR: f64 = 1e-6;

impl WeightMatrix {
    pub fn new(height: usize, width: usize, r_cut: f64, p: f64, floor: f64) -> Result<Self> {
        Self::with_scale(height, width, r_cut, p, floor, CoordScale::Normalized)
    }

    pub fn with_scale(
        height: usize,
        width: usize,
        r_cut: f64,
        p: f64,
        floor: f64,
        coord: CoordScale,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(CoreError::InvalidInput("weight matrix needs a nonempty grid".into()));
        }
        if !(r_cut > 0.0) {
            return Err(CoreError::InvalidInput("r_cut must be positive".into()));
        }
        if !(floor >= 0.0) {
            return Err(CoreError::InvalidInput("floor must be nonnegative".into()));
        }
        let (ch, cw) = (height / 2, width / 2);
        let w = Array2::from_shape_fn((height, width), |(i, j)| {
            let (mut cx, mut cy) = (i as f64 - ch as f64, j as f64 - cw as f64);
            if coord == CoordScale::Normalized {
                cx /= height as f64 / 2.0;
                cy /= width as f64 / 2.0;
            }
            let radial = r_cut * cx * cx + r_cut * cy * cy;
            radial.powf(p).max(floor)
        });
        Ok(Self {
            w,
            r_cut,
            p,
            floor,
            coord,
        })
    }

    pub fn defaults(height: usize, width: usize) -> Self {
        Self::new(height, width, DEFAULT_R_CUT, DEFAULT_P, DEFAULT_FLOOR)
            .expect("default weight parameters are valid")
    }

    pub fn weights(&self) -> &RealGrid {
        &self.w
    }

    pub fn shape(&self) -> (usize, usize) {
        self.w.dim()
    }

    pub fn r_cut(&self) -> f64 {
        self.r_cut
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn coord(&self) -> CoordScale {
        self.coord
    }
}

/// Elementwise product with the weight matrix.
pub fn apply_weight(k: &ComplexGrid, wm: &WeightMatrix) -> Result<ComplexGrid> {
    if k.shape() != wm.shape() {
        return Err(CoreError::ShapeMismatch {
            expected: wm.shape(),
            got: k.shape(),
        });
    }
    let mut out = k.array().clone();
    out.zip_mut_with(&wm.w, |v, &w| *v *= w);
    Ok(ComplexGrid::from_array(out))
}

/// Elementwise division by the weight matrix. Requires a positive floor so
/// the division is defined at the DC bin.
pub fn unapply_weight(kw: &ComplexGrid, wm: &WeightMatrix) -> Result<ComplexGrid> {
    if wm.floor <= 0.0 {
        return Err(CoreError::InvalidInput(
            "unapply_weight needs floor > 0 (division by zero at DC)".into(),
        ));
    }
    if kw.shape() != wm.shape() {
        return Err(CoreError::ShapeMismatch {
            expected: wm.shape(),
            got: kw.shape(),
        });
    }
    let mut out = kw.array().clone();
    out.zip_mut_with(&wm.w, |v, &w| *v /= w);
    Ok(ComplexGrid::from_array(out))
}

/// Centered n-by-n low-frequency window; the operator keeps the complement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CenterMask {
    window: usize,
    height: usize,
    width: usize,
    row_range: (usize, usize),
    col_range: (usize, usize),
}

impl CenterMask {
    pub fn new(window: usize, height: usize, width: usize) -> Result<Self> {
        if window == 0 {
            return Err(CoreError::InvalidInput("center window must be positive".into()));
        }
        if window > height.min(width) {
            return Err(CoreError::InvalidInput(format!(
                "center window {window} exceeds grid {height}x{width}"
            )));
        }
        let (ch, cw) = (height / 2, width / 2);
        let r0 = ch - window / 2;
        let c0 = cw - window / 2;
        Ok(Self {
            window,
            height,
            width,
            row_range: (r0, r0 + window),
            col_range: (c0, c0 + window),
        })
    }

    /// Window size scaled from the 256-reference convention:
    /// n_scaled = round(n * H / 256).
    pub fn scaled(window_256: usize, height: usize, width: usize) -> Result<Self> {
        let n = ((window_256 as f64) * (height as f64) / 256.0).round().max(1.0) as usize;
        Self::new(n, height, width)
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        i >= self.row_range.0 && i < self.row_range.1 && j >= self.col_range.0 && j < self.col_range.1
    }

    /// The low-frequency window m as a boolean grid (1 on the block).
    pub fn low_mask(&self) -> Array2<bool> {
        Array2::from_shape_fn((self.height, self.width), |(i, j)| self.contains(i, j))
    }

    /// The complement I - m selecting the high-frequency region.
    pub fn complement(&self) -> Array2<bool> {
        Array2::from_shape_fn((self.height, self.width), |(i, j)| !self.contains(i, j))
    }
}

/// Zero the centered low-frequency block, identity elsewhere.
pub fn apply_highpass(k: &ComplexGrid, cm: &CenterMask) -> Result<ComplexGrid> {
    if k.shape() != cm.shape() {
        return Err(CoreError::ShapeMismatch {
            expected: cm.shape(),
            got: k.shape(),
        });
    }
    let mut out = k.array().clone();
    for i in cm.row_range.0..cm.row_range.1 {
        for j in cm.col_range.0..cm.col_range.1 {
            out[(i, j)] = num_complex::Complex64::new(0.0, 0.0);
        }
    }
    Ok(ComplexGrid::from_array(out))
}

/// A frequency-domain prior extractor.
#[derive(Debug, Clone)]
pub enum FreqOperator {
    Identity,
    Weight(WeightMatrix),
    Mask(CenterMask),
}

impl FreqOperator {
    pub fn apply(&self, k: &ComplexGrid) -> Result<ComplexGrid> {
        match self {
            FreqOperator::Identity => Ok(k.clone()),
            FreqOperator::Weight(wm) => apply_weight(k, wm),
            FreqOperator::Mask(cm) => apply_highpass(k, cm),
        }
    }

    pub fn tag(&self) -> OperatorTag {
        match self {
            FreqOperator::Identity => OperatorTag::Raw,
            FreqOperator::Weight(wm) => OperatorTag::Weight {
                r_cut: wm.r_cut,
                p: wm.p,
                floor: wm.floor,
                coord: wm.coord,
            },
            FreqOperator::Mask(cm) => OperatorTag::Mask { window: cm.window },
        }
    }

    /// Rebuild the operator for a given grid shape from its tag.
    pub fn from_tag(tag: &OperatorTag, height: usize, width: usize) -> Result<Self> {
        Ok(match tag {
            OperatorTag::Raw => FreqOperator::Identity,
            OperatorTag::Weight {
                r_cut,
                p,
                floor,
                coord,
            } => FreqOperator::Weight(WeightMatrix::with_scale(
                height, width, *r_cut, *p, *floor, *coord,
            )?),
            OperatorTag::Mask { window } => FreqOperator::Mask(CenterMask::new(*window, height, width)?),
        })
    }
}

/// Serializable description of an extractor, stored in model checkpoints so
/// reconstruction can pair each model with the operator it was trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OperatorTag {
    Raw,
    Weight {
        r_cut: f64,
        p: f64,
        floor: f64,
        coord: CoordScale,
    },
    Mask {
        window: usize,
    },
}

impl OperatorTag {
    pub fn is_weight(&self) -> bool {
        matches!(self, OperatorTag::Weight { .. })
    }

    pub fn is_mask(&self) -> bool {
        matches!(self, OperatorTag::Mask { .. })
    }
}

/// Pearson correlation over flattened entries. Errors on constant input.
pub fn correlation(x: &RealGrid, y: &RealGrid) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(CoreError::ShapeMismatch {
            expected: x.dim(),
            got: y.dim(),
        });
    }
    let n = x.len() as f64;
    let mx = x.sum() / n;
    let my = y.sum() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in x.iter().zip(y.iter()) {
        let (da, db) = (a - mx, b - my);
        cov += da * db;
        vx += da * da;
        vy += db * db;
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(CoreError::InvalidInput(
            "correlation undefined for constant input (zero variance)".into(),
        ));
    }
    Ok(cov / (vx.sqrt() * vy.sqrt()))
}

/// Image-domain magnitude of the operator-filtered k-space: the feature
/// used to compare extractors by correlation.
pub fn feature_map(k: &ComplexGrid, op: &FreqOperator) -> Result<RealGrid> {
    let filtered = op.apply(k)?;
    Ok(ifft2c(&filtered).magnitude())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fft::fft2c;
    use crate::rng::{noise_grid, substream};
    use num_complex::Complex64;

    #[test]
    fn zeroth_power_weight_is_unit_scale() {
        let wm = WeightMatrix::new(4, 4, 1.0, 0.0, 1e-6).unwrap();
        let k = ComplexGrid::from_fn(4, 4, |_, _| Complex64::new(1.0, 0.0));
        let out = apply_weight(&k, &wm).unwrap();
        assert!(out.linf_distance(&k) < 1e-15);
    }

    #[test]
    fn index_scale_hand_oracle_value() {
        // 4x4, r_cut=1, p=1: at centered offset (1,1), w = 1*1^2 + 1*1^2 = 2.
        let wm = WeightMatrix::with_scale(4, 4, 1.0, 1.0, 1e-6, CoordScale::Index).unwrap();
        let k = ComplexGrid::from_fn(4, 4, |_, _| Complex64::new(1.0, 0.0));
        let out = apply_weight(&k, &wm).unwrap();
        assert!((out.get(3, 3) - Complex64::new(2.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn weight_round_trip() {
        let mut rng = substream(2, "freq-roundtrip");
        let k = noise_grid(&mut rng, 8, 8);
        let wm = WeightMatrix::defaults(8, 8);
        let back = unapply_weight(&apply_weight(&k, &wm).unwrap(), &wm).unwrap();
        for (a, b) in back.array().iter().zip(k.array().iter()) {
            assert!((a - b).norm() <= 1e-10 * b.norm().max(1e-30));
        }
    }

    #[test]
    fn unapply_matches_scalar_division_oracle() {
        let mut rng = substream(21, "freq-div");
        let kw = noise_grid(&mut rng, 8, 8);
        let wm = WeightMatrix::new(8, 8, 0.7, 0.8, 1e-4).unwrap();
        let out = unapply_weight(&kw, &wm).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let expect = kw.get(i, j) / wm.weights()[(i, j)];
                assert!((out.get(i, j) - expect).norm() < 1e-12 * expect.norm().max(1.0));
            }
        }
        let zeros = ComplexGrid::zeros(8, 8);
        assert!(unapply_weight(&zeros, &wm).unwrap().norm_sqr() == 0.0);
    }

    #[test]
    fn unapply_rejects_zero_floor() {
        let wm = WeightMatrix::new(4, 4, 1.0, 0.5, 0.0).unwrap();
        assert!(unapply_weight(&ComplexGrid::zeros(4, 4), &wm).is_err());
    }

    #[test]
    fn weight_symmetric_under_point_reflection() {
        // On an odd grid the centered coordinates are exactly symmetric.
        let wm = WeightMatrix::defaults(9, 9);
        let w = wm.weights();
        for i in 0..9 {
            for j in 0..9 {
                let (ri, rj) = (8 - i, 8 - j);
                assert!((w[(i, j)] - w[(ri, rj)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn highpass_centered_block_on_even_grid() {
        let cm = CenterMask::new(2, 4, 4).unwrap();
        let k = ComplexGrid::from_fn(4, 4, |_, _| Complex64::new(1.0, 0.0));
        let out = apply_highpass(&k, &cm).unwrap();
        let mut zeros = 0;
        for i in 0..4 {
            for j in 0..4 {
                let inside = (1..=2).contains(&i) && (1..=2).contains(&j);
                if inside {
                    assert_eq!(out.get(i, j), Complex64::new(0.0, 0.0));
                    zeros += 1;
                } else {
                    assert_eq!(out.get(i, j), Complex64::new(1.0, 0.0));
                }
            }
        }
        assert_eq!(zeros, 4);
    }

    #[test]
    fn full_window_highpass_zeroes_everything() {
        let cm = CenterMask::new(4, 4, 4).unwrap();
        let mut rng = substream(3, "freq-full");
        let out = apply_highpass(&noise_grid(&mut rng, 4, 4), &cm).unwrap();
        assert_eq!(out.norm_sqr(), 0.0);
    }

    #[test]
    fn highpass_is_idempotent_and_orthogonal() {
        let mut rng = substream(4, "freq-idem");
        let k = noise_grid(&mut rng, 8, 8);
        let cm = CenterMask::new(3, 8, 8).unwrap();
        let once = apply_highpass(&k, &cm).unwrap();
        let twice = apply_highpass(&once, &cm).unwrap();
        assert_eq!(once, twice);
        let residual = k.sub(&once);
        assert!(once.inner(&residual).norm() < 1e-12);
    }

    #[test]
    fn window_validation() {
        assert!(CenterMask::new(0, 4, 4).is_err());
        assert!(CenterMask::new(5, 4, 4).is_err());
        assert!(CenterMask::new(4, 4, 4).is_ok());
        assert_eq!(CenterMask::scaled(50, 64, 64).unwrap().window(), 13);
    }

    #[test]
    fn operators_are_linear() {
        let mut rng = substream(5, "freq-linear");
        let u = noise_grid(&mut rng, 8, 8);
        let v = noise_grid(&mut rng, 8, 8);
        let comb = u.scale(1.5).add(&v.scale(-0.25));
        for op in [
            FreqOperator::Weight(WeightMatrix::defaults(8, 8)),
            FreqOperator::Mask(CenterMask::new(4, 8, 8).unwrap()),
        ] {
            let lhs = op.apply(&comb).unwrap();
            let rhs = op.apply(&u).unwrap().scale(1.5).add(&op.apply(&v).unwrap().scale(-0.25));
            assert!(lhs.linf_distance(&rhs) < 1e-12);
        }
    }

    #[test]
    fn correlation_basics() {
        let x = RealGrid::from_shape_vec((2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = x.mapv(|v| 2.0 * v);
        assert!((correlation(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!((correlation(&x, &x.mapv(|v| -v)).unwrap() + 1.0).abs() < 1e-12);
        assert!((correlation(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        let flat = RealGrid::from_elem((2, 2), 3.0);
        assert!(correlation(&x, &flat).is_err());
    }

    #[test]
    fn feature_map_identity_and_full_window() {
        let mut rng = substream(6, "freq-feature");
        let img = noise_grid(&mut rng, 8, 8);
        let k = fft2c(&img);
        let fm = feature_map(&k, &FreqOperator::Identity).unwrap();
        let expect = ifft2c(&k).magnitude();
        for (a, b) in fm.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let full = FreqOperator::Mask(CenterMask::new(8, 8, 8).unwrap());
        let zero_map = feature_map(&k, &full).unwrap();
        assert!(zero_map.iter().all(|v| *v == 0.0));
    }
}
