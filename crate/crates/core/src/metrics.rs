//! Image-quality metrics computed on real-valued image-domain grids.

use ndarray::Array2;

use crate::error::{CoreError, Result};
use crate::grid::RealGrid;

/// Mean squared error.
pub fn mse(reference: &RealGrid, test: &RealGrid) -> Result<f64> {
    check_shapes(reference, test)?;
    let n = reference.len() as f64;
    let sum: f64 = reference
        .iter()
        .zip(test.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / n)
}

/// Peak signal-to-noise ratio in dB: 10*log10(max(ref)^2 / MSE).
/// Identical inputs report +inf.
pub fn psnr(reference: &RealGrid, test: &RealGrid) -> Result<f64> {
    check_shapes(reference, test)?;
    let peak = reference.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0) {
        return Err(CoreError::InvalidInput(
            "psnr requires a reference with positive maximum".into(),
        ));
    }
    let err = mse(reference, test)?;
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / err).log10())
}

const SSIM_WINDOW: usize = 7;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Horizontal then vertical pass of the separable Gaussian, valid region only.
fn gaussian_filter_valid(img: &RealGrid) -> RealGrid {
    let k = gaussian_kernel();
    let (h, w) = img.dim();
    let half = SSIM_WINDOW / 2;
    let wv = w - 2 * half;
    let hv = h - 2 * half;
    let mut tmp = Array2::<f64>::zeros((h, wv));
    for i in 0..h {
        for j in 0..wv {
            let mut acc = 0.0;
            for (t, kt) in k.iter().enumerate() {
                acc += kt * img[(i, j + t)];
            }
            tmp[(i, j)] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((hv, wv));
    for i in 0..hv {
        for j in 0..wv {
            let mut acc = 0.0;
            for (t, kt) in k.iter().enumerate() {
                acc += kt * tmp[(i + t, j)];
            }
            out[(i, j)] = acc;
        }
    }
    out
}

/// Mean local SSIM over a 7x7 Gaussian window with an externally fixed
/// dynamic range.
pub fn ssim_with_range(reference: &RealGrid, test: &RealGrid, dynamic_range: f64) -> Result<f64> {
    check_shapes(reference, test)?;
    let (h, w) = reference.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(CoreError::InvalidInput(format!(
            "ssim needs at least a {SSIM_WINDOW}x{SSIM_WINDOW} image, got {h}x{w}"
        )));
    }
    if !(dynamic_range > 0.0) {
        return Err(CoreError::InvalidInput(
            "ssim requires a positive dynamic range".into(),
        ));
    }
    let c1 = (SSIM_K1 * dynamic_range).powi(2);
    let c2 = (SSIM_K2 * dynamic_range).powi(2);

    let mu_x = gaussian_filter_valid(reference);
    let mu_y = gaussian_filter_valid(test);
    let xx = gaussian_filter_valid(&(reference * reference));
    let yy = gaussian_filter_valid(&(test * test));
    let xy = gaussian_filter_valid(&(reference * test));

    let mut acc = 0.0;
    for ((((mx, my), sxx), syy), sxy) in mu_x
        .iter()
        .zip(mu_y.iter())
        .zip(xx.iter())
        .zip(yy.iter())
        .zip(xy.iter())
    {
        let var_x = sxx - mx * mx;
        let var_y = syy - my * my;
        let cov = sxy - mx * my;
        let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
        let den = (mx * mx + my * my + c1) * (var_x + var_y + c2);
        acc += num / den;
    }
    Ok(acc / mu_x.len() as f64)
}

/// SSIM with dynamic range taken from the reference maximum.
pub fn ssim(reference: &RealGrid, test: &RealGrid) -> Result<f64> {
    let peak = reference.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0) {
        return Err(CoreError::InvalidInput(
            "ssim requires a reference with positive maximum (zero-range input)".into(),
        ));
    }
    ssim_with_range(reference, test, peak)
}

fn check_shapes(a: &RealGrid, b: &RealGrid) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(CoreError::ShapeMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(())
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{real_noise_grid, substream};

    #[test]
    fn psnr_direct_formula() {
        // max(ref) = 1, MSE = 1e-4 -> 40 dB.
        let reference = RealGrid::from_elem((10, 10), 1.0);
        let test = reference.mapv(|v| v - 0.01);
        let p = psnr(&reference, &test).unwrap();
        assert!((p - 40.0).abs() < 1e-9);
    }

    #[test]
    fn identical_images_hit_ideals() {
        let mut rng = substream(7, "metrics-ident");
        let img = real_noise_grid(&mut rng, 12, 12).mapv(|v| v.abs() + 0.1);
        assert_eq!(psnr(&img, &img).unwrap(), f64::INFINITY);
        assert_eq!(mse(&img, &img).unwrap(), 0.0);
        assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mse_trivial_values() {
        let zeros = RealGrid::zeros((4, 4));
        let ones = RealGrid::from_elem((4, 4), 1.0);
        assert_eq!(mse(&zeros, &ones).unwrap(), 1.0);
    }

    #[test]
    fn metrics_match_naive_oracles() {
        let mut rng = substream(8, "metrics-oracle");
        for _ in 0..20 {
            let a = real_noise_grid(&mut rng, 16, 16).mapv(|v| v.abs() + 0.05);
            let b = real_noise_grid(&mut rng, 16, 16).mapv(|v| v.abs() + 0.05);
            let rel = |x: f64, y: f64| (x - y).abs() / y.abs().max(1e-300);
            assert!(rel(mse(&a, &b).unwrap(), oracle::mse_naive(&a, &b)) < 1e-9);
            assert!(rel(psnr(&a, &b).unwrap(), oracle::psnr_naive(&a, &b)) < 1e-9);
            let peak = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(rel(
                ssim_with_range(&a, &b, peak).unwrap(),
                oracle::ssim_naive(&a, &b, peak)
            ) < 1e-9);
        }
    }

    #[test]
    fn ssim_symmetric_with_fixed_range() {
        let mut rng = substream(9, "metrics-sym");
        let a = real_noise_grid(&mut rng, 10, 10).mapv(|v| v.abs());
        let b = real_noise_grid(&mut rng, 10, 10).mapv(|v| v.abs());
        let s1 = ssim_with_range(&a, &b, 1.0).unwrap();
        let s2 = ssim_with_range(&b, &a, 1.0).unwrap();
        assert!((s1 - s2).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs_error() {
        let zeros = RealGrid::zeros((8, 8));
        assert!(psnr(&zeros, &zeros).is_err());
        assert!(ssim(&zeros, &zeros).is_err());
        let a = RealGrid::zeros((8, 8));
        let b = RealGrid::zeros((8, 9));
        assert!(mse(&a, &b).is_err());
    }
}
