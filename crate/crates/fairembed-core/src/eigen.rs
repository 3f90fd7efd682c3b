//! Dense symmetric eigendecomposition (cyclic Jacobi) and sample covariance.
//!
//! The Jacobi solver is O(d^3) per sweep and intended for the moderate
//! dimensions used here (d up to a few hundred). It gives deterministic,
//! platform-stable results: sweep order is fixed, convergence is judged
//! against the input's Frobenius norm, and eigenvector signs are
//! canonicalized so repeated runs produce identical matrices.

use nalgebra::{DMatrix, DVector};

use crate::error::{CoreError, Result};

/// Largest admissible asymmetry `max |A_ij - A_ji|` before rejecting input.
const SYMMETRY_TOL: f64 = 1e-10;

/// Convergence: all off-diagonal magnitudes below this multiple of the
/// input's Frobenius norm.
const CONVERGENCE_REL: f64 = 1e-12;

/// Hard cap on Jacobi sweeps before reporting non-convergence.
const MAX_SWEEPS: usize = 64;

/// Eigendecomposition of a symmetric matrix: `A = Q diag(values) Q^T`.
///
/// Eigenvalues are sorted descending; column `i` of `vectors` is the unit
/// eigenvector paired with `values[i]`, with its largest-magnitude entry
/// made positive.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Eigenvalues in descending order.
    pub values: DVector<f64>,
    /// Orthonormal eigenvectors as columns, ordered like `values`.
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    /// Dimension of the decomposed matrix.
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Maximum absolute asymmetry of a square matrix.
fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let d = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..d {
        for j in (i + 1)..d {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Frobenius norm of the strictly off-diagonal part.
fn off_diagonal_norm(a: &DMatrix<f64>) -> f64 {
    let d = a.nrows();
    let mut acc = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i != j {
                acc += a[(i, j)] * a[(i, j)];
            }
        }
    }
    acc.sqrt()
}

/// Flips eigenvector signs so each column's largest-magnitude entry is
/// positive. Ties on magnitude resolve to the earliest row, keeping the
/// canonicalization deterministic.
fn canonicalize_signs(q: &mut DMatrix<f64>) {
    for mut col in q.column_iter_mut() {
        let mut pivot = 0;
        let mut best = f64::NEG_INFINITY;
        for (row, &v) in col.iter().enumerate() {
            if v.abs() > best {
                best = v.abs();
                pivot = row;
            }
        }
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
    }
}

/// Eigendecomposition of a symmetric matrix via cyclic Jacobi rotations.
///
/// The input must be symmetric to within `1e-10` entrywise. Convergence is
/// declared once every off-diagonal magnitude falls below
/// `1e-12 * ||A||_F`; the rotation sweep order is fixed, so results are
/// bit-reproducible for a given input.
pub fn sym_eig(a: &DMatrix<f64>) -> Result<SymEigen> {
    let d = a.nrows();
    if d == 0 {
        return Err(CoreError::EmptyInput("sym_eig"));
    }
    if a.ncols() != d {
        return Err(CoreError::DimensionMismatch { expected: d, got: a.ncols() });
    }
    let asym = max_asymmetry(a);
    if asym > SYMMETRY_TOL {
        return Err(CoreError::NotSymmetric { max_asymmetry: asym });
    }

    // Work on the symmetrized copy so the iteration preserves symmetry
    // exactly even when the input carries asymmetry below tolerance.
    let mut m = DMatrix::from_fn(d, d, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    let mut q = DMatrix::<f64>::identity(d, d);
    let fro = m.norm();
    let threshold = CONVERGENCE_REL * fro;

    let mut sweeps = 0;
    while off_diagonal_norm(&m) > threshold {
        if sweeps >= MAX_SWEEPS {
            return Err(CoreError::NoConvergence {
                sweeps,
                residual: off_diagonal_norm(&m),
            });
        }
        sweeps += 1;
        for p in 0..d {
            for r in (p + 1)..d {
                let apr = m[(p, r)];
                // Rotating an already-negligible entry only spreads
                // round-off; the outer loop re-checks the global residual.
                if apr.abs() <= threshold / (d as f64) {
                    continue;
                }
                let theta = (m[(r, r)] - m[(p, p)]) / (2.0 * apr);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                // Two-sided rotation on rows/columns p and r.
                for j in 0..d {
                    let mpj = m[(p, j)];
                    let mrj = m[(r, j)];
                    m[(p, j)] = c * mpj - s * mrj;
                    m[(r, j)] = s * mpj + c * mrj;
                }
                for i in 0..d {
                    let mip = m[(i, p)];
                    let mir = m[(i, r)];
                    m[(i, p)] = c * mip - s * mir;
                    m[(i, r)] = s * mip + c * mir;
                }
                // Accumulate the rotation into the eigenvector matrix.
                for i in 0..d {
                    let qip = q[(i, p)];
                    let qir = q[(i, r)];
                    q[(i, p)] = c * qip - s * qir;
                    q[(i, r)] = s * qip + c * qir;
                }
            }
        }
    }

    // Sort descending by eigenvalue; stable on ties so degenerate spectra
    // keep the sweep's input order.
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| m[(j, j)].partial_cmp(&m[(i, i)]).unwrap());
    let values = DVector::from_fn(d, |i, _| m[(order[i], order[i])]);
    let mut vectors = DMatrix::zeros(d, d);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &q.column(src));
    }
    canonicalize_signs(&mut vectors);

    Ok(SymEigen { values, vectors })
}

/// Sample mean and unbiased (divisor N-1) sample covariance of a set of
/// points, given as rows of `data`.
///
/// The covariance is accumulated symmetrically, so the result equals its
/// own transpose exactly.
pub fn sample_covariance(data: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = data.nrows();
    let d = data.ncols();
    if n < 2 {
        return Err(CoreError::InsufficientData(format!(
            "sample covariance needs at least 2 points, got {n}"
        )));
    }
    let mean = DVector::from_fn(d, |j, _| data.column(j).sum() / n as f64);
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for row in data.row_iter() {
        for i in 0..d {
            let ci = row[i] - mean[i];
            for j in i..d {
                cov[(i, j)] += ci * (row[j] - mean[j]);
            }
        }
    }
    let scale = 1.0 / (n as f64 - 1.0);
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] * scale;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok((mean, cov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identity_has_unit_eigenvalues() {
        let eig = sym_eig(&DMatrix::identity(3, 3)).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(eig.values[i], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn two_by_two_hand_example() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let eig = sym_eig(&a).unwrap();
        assert_abs_diff_eq!(eig.values[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eig.values[1], 1.0, epsilon = 1e-12);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        // Sign canonicalization makes the largest entry positive, so the
        // second vector is (1,-1)/sqrt(2) rather than its negative.
        assert_abs_diff_eq!(eig.vectors[(0, 0)], r, epsilon = 1e-12);
        assert_abs_diff_eq!(eig.vectors[(1, 0)], r, epsilon = 1e-12);
        assert_abs_diff_eq!(eig.vectors[(0, 1)], r, epsilon = 1e-12);
        assert_abs_diff_eq!(eig.vectors[(1, 1)], -r, epsilon = 1e-12);
    }

    #[test]
    fn diagonal_matrix_is_axis_aligned() {
        let a = DMatrix::from_row_slice(2, 2, &[5.0, 0.0, 0.0, 2.0]);
        let eig = sym_eig(&a).unwrap();
        assert_abs_diff_eq!(eig.values[0], 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eig.values[1], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eig.vectors[(0, 0)], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eig.vectors[(1, 1)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_asymmetric_input() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        match sym_eig(&a) {
            Err(CoreError::NotSymmetric { max_asymmetry }) => {
                assert_abs_diff_eq!(max_asymmetry, 0.5, epsilon = 1e-15);
            }
            other => panic!("expected NotSymmetric, got {other:?}"),
        }
    }

    #[test]
    fn reconstruction_and_orthonormality_on_random_input() {
        let mut s = crate::stream::Stream::root(101);
        for d in [1usize, 2, 5, 16] {
            let b = DMatrix::from_fn(d, d, |_, _| s.standard_normal());
            let a = &b + b.transpose();
            let eig = sym_eig(&a).unwrap();

            let qtq = eig.vectors.transpose() * &eig.vectors;
            let id = DMatrix::<f64>::identity(d, d);
            assert!((qtq - &id).norm() < 1e-9, "orthonormality failed at d={d}");

            let recon =
                &eig.vectors * DMatrix::from_diagonal(&eig.values) * eig.vectors.transpose();
            let rel = (&recon - &a).norm() / a.norm().max(1e-300);
            assert!(rel < 1e-8, "reconstruction failed at d={d}: rel={rel}");

            for i in 1..d {
                assert!(eig.values[i - 1] >= eig.values[i]);
            }
        }
    }

    #[test]
    fn zero_matrix_is_handled() {
        let eig = sym_eig(&DMatrix::zeros(3, 3)).unwrap();
        for i in 0..3 {
            assert_eq!(eig.values[i], 0.0);
        }
    }

    #[test]
    fn covariance_of_symmetric_pair() {
        let data = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        let (mean, cov) = sample_covariance(&data).unwrap();
        assert_eq!(mean[0], 0.0);
        assert_eq!(mean[1], 0.0);
        assert_abs_diff_eq!(cov[(0, 0)], 2.0, epsilon = 1e-15);
        assert_eq!(cov[(0, 1)], 0.0);
        assert_eq!(cov[(1, 0)], 0.0);
        assert_eq!(cov[(1, 1)], 0.0);
    }

    #[test]
    fn covariance_of_identical_points_is_zero() {
        let data = DMatrix::from_row_slice(3, 2, &[4.0, -1.0, 4.0, -1.0, 4.0, -1.0]);
        let (_, cov) = sample_covariance(&data).unwrap();
        assert_eq!(cov, DMatrix::zeros(2, 2));
    }

    #[test]
    fn covariance_is_exactly_symmetric() {
        let mut s = crate::stream::Stream::root(55);
        let data = DMatrix::from_fn(20, 6, |_, _| s.standard_normal());
        let (_, cov) = sample_covariance(&data).unwrap();
        assert_eq!(cov, cov.transpose());
    }

    #[test]
    fn covariance_rejects_single_point() {
        let data = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        assert!(matches!(
            sample_covariance(&data),
            Err(CoreError::InsufficientData(_))
        ));
    }
}
