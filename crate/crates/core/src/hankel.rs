//! Structured low-rank (block-Hankel) projection of k-space grids.
//!
//! Sliding a-by-b patches of the grid become matrix columns; piecewise-smooth
//! images yield low-rank lifts, so hard-thresholding singular values and
//! mapping back (averaging duplicated entries) denoises and completes
//! k-space.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{CoreError, Result};
use crate::grid::ComplexGrid;

fn check_window(k: &ComplexGrid, window: (usize, usize)) -> Result<()> {
    let (h, w) = k.shape();
    let (a, b) = window;
    if a == 0 || b == 0 || a > h || b > w {
        return Err(CoreError::InvalidInput(format!(
            "hankel window {a}x{b} invalid for grid {h}x{w}"
        )));
    }
    Ok(())
}

/// Block-Hankel lift: columns are vectorized a-by-b sliding patches, one per
/// patch position, positions enumerated column-major (row index fastest).
pub fn hankel_lift(k: &ComplexGrid, window: (usize, usize)) -> Result<Array2<Complex64>> {
    check_window(k, window)?;
    let (h, w) = k.shape();
    let (a, b) = window;
    let (ph, pw) = (h - a + 1, w - b + 1);
    let mut lift = Array2::zeros((a * b, ph * pw));
    for pj in 0..pw {
        for pi in 0..ph {
            let col = pi + pj * ph;
            for v in 0..b {
                for u in 0..a {
                    lift[(u + v * a, col)] = k.get(pi + u, pj + v);
                }
            }
        }
    }
    Ok(lift)
}

/// Hankel pseudo-inverse: average every lift entry that maps to the same
/// k-space index. Exact left inverse of [`hankel_lift`].
pub fn hankel_unlift(
    lift: &Array2<Complex64>,
    shape: (usize, usize),
    window: (usize, usize),
) -> Result<ComplexGrid> {
    let (h, w) = shape;
    let (a, b) = window;
    let (ph, pw) = (h - a + 1, w - b + 1);
    if lift.dim() != (a * b, ph * pw) {
        return Err(CoreError::InvalidInput(format!(
            "lift shape {:?} inconsistent with grid {h}x{w} and window {a}x{b}",
            lift.dim()
        )));
    }
    let mut acc = Array2::<Complex64>::zeros((h, w));
    let mut counts = Array2::<f64>::zeros((h, w));
    for pj in 0..pw {
        for pi in 0..ph {
            let col = pi + pj * ph;
            for v in 0..b {
                for u in 0..a {
                    acc[(pi + u, pj + v)] += lift[(u + v * a, col)];
                    counts[(pi + u, pj + v)] += 1.0;
                }
            }
        }
    }
    acc.zip_mut_with(&counts, |x, &c| *x /= c);
    Ok(ComplexGrid::from_array(acc))
}

fn to_dmatrix(m: &Array2<Complex64>) -> DMatrix<Complex64> {
    let (r, c) = m.dim();
    DMatrix::from_fn(r, c, |i, j| m[(i, j)])
}

/// Eigendecomposition of the Gram matrix on the smaller side, sorted by
/// descending eigenvalue. Returns (eigenvalues, eigenvectors-as-columns,
/// gram_was_left) where the vectors are left singular vectors when
/// `gram_was_left` and right singular vectors otherwise.
fn gram_eigen(lift: &Array2<Complex64>) -> Result<(Vec<f64>, DMatrix<Complex64>, bool)> {
    let m = to_dmatrix(lift);
    let (rows, cols) = (m.nrows(), m.ncols());
    let left = rows <= cols;
    let gram = if left {
        &m * m.adjoint()
    } else {
        m.adjoint() * &m
    };
    let eig = nalgebra::SymmetricEigen::try_new(gram, f64::EPSILON, 0).ok_or_else(|| {
        CoreError::Numerical("SVD of the Hankel lift failed to converge".into())
    })?;
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &DVector::from(eig.eigenvectors.column(src).clone_owned()));
    }
    Ok((values, vectors, left))
}

/// Singular values of a lift, descending.
pub fn lift_singular_values(lift: &Array2<Complex64>) -> Result<Vec<f64>> {
    let (values, _, _) = gram_eigen(lift)?;
    Ok(values.into_iter().map(f64::sqrt).collect())
}

/// Project the grid toward low rank: lift, keep the l largest singular
/// values, map back by averaging.
pub fn hankel_project(k: &ComplexGrid, window: (usize, usize), rank: usize) -> Result<ComplexGrid> {
    check_window(k, window)?;
    let lift = hankel_lift(k, window)?;
    let (rows, cols) = lift.dim();
    let min_dim = rows.min(cols);
    if rank == 0 {
        return Err(CoreError::InvalidInput("hankel rank must be at least 1".into()));
    }
    if rank > min_dim {
        return Err(CoreError::InvalidInput(format!(
            "hankel rank {rank} exceeds lift min dimension {min_dim}"
        )));
    }
    if rank == min_dim {
        // Full rank keeps the lift; unlift is then the identity.
        return hankel_unlift(&lift, k.shape(), window);
    }

    let (_, vectors, left) = gram_eigen(&lift)?;
    let m = to_dmatrix(&lift);
    let basis = vectors.columns(0, rank).clone_owned();
    // Orthogonal projection onto the top-rank subspace of the smaller side.
    let truncated = if left {
        &basis * (basis.adjoint() * &m)
    } else {
        (&m * &basis) * basis.adjoint()
    };
    let mut out = Array2::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            out[(i, j)] = truncated[(i, j)];
        }
    }
    hankel_unlift(&out, k.shape(), window)
}
