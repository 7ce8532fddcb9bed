//! Centered unitary 2D Fourier transforms.
//!
//! The DC component sits exactly at (floor(H/2), floor(W/2)) and the
//! normalization is 1/sqrt(H*W) in each direction, so the composed
//! transform is unitary: round trips are exact to rounding and Parseval
//! holds without scale factors. Center low-frequency windows are defined
//! around this DC bin.

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};
use std::sync::{Mutex, OnceLock};

use crate::grid::ComplexGrid;

fn planner() -> &'static Mutex<FftPlanner<f64>> {
    static PLANNER: OnceLock<Mutex<FftPlanner<f64>>> = OnceLock::new();
    PLANNER.get_or_init(|| Mutex::new(FftPlanner::new()))
}

/// Cyclic roll so that input index `shift` lands at output index 0.
fn roll_axes(data: &Array2<Complex64>, shift_r: usize, shift_c: usize) -> Array2<Complex64> {
    let (h, w) = data.dim();
    Array2::from_shape_fn((h, w), |(i, j)| {
        data[((i + shift_r) % h, (j + shift_c) % w)]
    })
}

/// fftshift: move the zero-frequency bin from index 0 to floor(n/2).
fn fftshift(data: &Array2<Complex64>) -> Array2<Complex64> {
    let (h, w) = data.dim();
    roll_axes(data, h - h / 2, w - w / 2)
}

/// ifftshift: exact inverse of fftshift for odd and even lengths.
fn ifftshift(data: &Array2<Complex64>) -> Array2<Complex64> {
    let (h, w) = data.dim();
    roll_axes(data, h / 2, w / 2)
}

fn fft2_raw(data: &mut Array2<Complex64>, direction: FftDirection) {
    let (h, w) = data.dim();
    let (fft_row, fft_col) = {
        let mut planner = planner().lock().unwrap();
        (
            planner.plan_fft(w, direction),
            planner.plan_fft(h, direction),
        )
    };

    // Rows are contiguous in row-major layout.
    let mut scratch = vec![Complex64::default(); fft_row.get_inplace_scratch_len()];
    for mut row in data.rows_mut() {
        let slice = row.as_slice_mut().expect("row-major layout");
        fft_row.process_with_scratch(slice, &mut scratch);
    }

    // Columns via a transpose buffer.
    let mut col_buf = vec![Complex64::default(); h];
    scratch.resize(fft_col.get_inplace_scratch_len(), Complex64::default());
    for j in 0..w {
        for i in 0..h {
            col_buf[i] = data[(i, j)];
        }
        fft_col.process_with_scratch(&mut col_buf, &mut scratch);
        for i in 0..h {
            data[(i, j)] = col_buf[i];
        }
    }
}

fn fft2c_impl(g: &ComplexGrid, direction: FftDirection) -> ComplexGrid {
    let (h, w) = g.shape();
    let mut data = ifftshift(g.array());
    fft2_raw(&mut data, direction);
    let mut out = fftshift(&data);
    let scale = 1.0 / ((h * w) as f64).sqrt();
    out.mapv_inplace(|v| v * scale);
    ComplexGrid::from_array(out)
}

/// Centered unitary forward 2D DFT.
pub fn fft2c(g: &ComplexGrid) -> ComplexGrid {
    fft2c_impl(g, FftDirection::Forward)
}

/// Centered unitary inverse 2D DFT; exact inverse of [`fft2c`].
pub fn ifft2c(g: &ComplexGrid) -> ComplexGrid {
    fft2c_impl(g, FftDirection::Inverse)
}

/// Index of the DC bin: (floor(H/2), floor(W/2)).
pub fn dc_index(height: usize, width: usize) -> (usize, usize) {
    (height / 2, width / 2)
}

use crate::grid::CoilStack;

/// Per-coil [`fft2c`]; flips the stack's domain tag.
pub fn fft2c_stack(stack: &CoilStack) -> CoilStack {
    stack.map_flip_domain(fft2c)
}

/// Per-coil [`ifft2c`]; flips the stack's domain tag.
pub fn ifft2c_stack(stack: &CoilStack) -> CoilStack {
    stack.map_flip_domain(ifft2c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{noise_grid, substream};

    #[test]
    fn constant_grid_transforms_to_centered_delta() {
        let g = ComplexGrid::from_fn(4, 4, |_, _| Complex64::new(1.0, 0.0));
        let k = fft2c(&g);
        for i in 0..4 {
            for j in 0..4 {
                let expect = if (i, j) == (2, 2) { 4.0 } else { 0.0 };
                assert!(
                    (k.get(i, j) - Complex64::new(expect, 0.0)).norm() < 1e-12,
                    "at ({i},{j}): {:?}",
                    k.get(i, j)
                );
            }
        }
    }

    #[test]
    fn centered_delta_inverts_to_ones() {
        let mut k = ComplexGrid::zeros(4, 4);
        k.set(2, 2, Complex64::new(4.0, 0.0));
        let g = ifft2c(&k);
        for v in g.array().iter() {
            assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn round_trip_is_identity() {
        for (h, w) in [(4, 4), (5, 7), (8, 6), (9, 9)] {
            let mut rng = substream(42, "fft-roundtrip");
            let g = noise_grid(&mut rng, h, w);
            let back = ifft2c(&fft2c(&g));
            assert!(g.linf_distance(&back) < 1e-12, "shape ({h},{w})");
        }
    }

    #[test]
    fn parseval_energy_preserved() {
        let mut rng = substream(5, "fft-parseval");
        let g = noise_grid(&mut rng, 16, 12);
        let k = fft2c(&g);
        let rel = (g.norm_sqr() - k.norm_sqr()).abs() / g.norm_sqr();
        assert!(rel < 1e-10);
    }

    #[test]
    fn unitary_inner_products_preserved() {
        let mut rng = substream(6, "fft-unitary");
        let a = noise_grid(&mut rng, 8, 8);
        let b = noise_grid(&mut rng, 8, 8);
        let lhs = fft2c(&a).inner(&fft2c(&b));
        let rhs = a.inner(&b);
        assert!((lhs - rhs).norm() / rhs.norm() < 1e-10);
    }

    #[test]
    fn linearity_of_inverse() {
        let mut rng = substream(9, "fft-linear");
        let a = noise_grid(&mut rng, 6, 10);
        let b = noise_grid(&mut rng, 6, 10);
        let lhs = ifft2c(&a.add(&b));
        let rhs = ifft2c(&a).add(&ifft2c(&b));
        assert!(lhs.linf_distance(&rhs) < 1e-12);
    }

    #[test]
    fn real_image_spectrum_is_hermitian_about_center() {
        for (h, w) in [(8, 8), (7, 9)] {
            let mut rng = substream(13, "fft-herm");
            let g = noise_grid(&mut rng, h, w).map(|v| Complex64::new(v.re, 0.0));
            let k = fft2c(&g);
            let (cr, cc) = dc_index(h, w);
            for i in 0..h {
                for j in 0..w {
                    let ri = (2 * cr + h - i) % h;
                    let rj = (2 * cc + w - j) % w;
                    let diff = (k.get(i, j) - k.get(ri, rj).conj()).norm();
                    assert!(diff < 1e-10, "({i},{j}) vs ({ri},{rj}) on ({h},{w})");
                }
            }
        }
    }

    #[test]
    fn stack_transforms_flip_domain() {
        use crate::grid::Domain;
        let mut rng = substream(1, "fft-stack");
        let stack = crate::grid::CoilStack::new(
            vec![noise_grid(&mut rng, 8, 8), noise_grid(&mut rng, 8, 8)],
            Domain::Image,
        )
        .unwrap();
        let k = fft2c_stack(&stack);
        assert_eq!(k.domain(), Domain::KSpace);
        let back = ifft2c_stack(&k);
        assert_eq!(back.domain(), Domain::Image);
        for (a, b) in stack.coils().iter().zip(back.coils()) {
            assert!(a.linf_distance(b) < 1e-12);
        }
    }
}
