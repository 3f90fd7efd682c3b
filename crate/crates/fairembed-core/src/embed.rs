//! The embedder contract shared by PCA and MLP embedders, and an empirical
//! local-Lipschitz estimator over that contract.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::eigen::sym_eig;
use crate::error::Result;
use crate::stream::Stream;

/// A differentiable embedding `psi: R^d -> R^k`.
///
/// Implementors must provide the forward map and the input gradient of the
/// scalar `uᵀ psi(x)` for an arbitrary upstream vector `u`; that is the
/// whole differentiation surface the attack and analysis code needs.
pub trait Embedder: Sync {
    /// Ambient (input) dimension `d`.
    fn input_dim(&self) -> usize;

    /// Embedding (output) dimension `k`.
    fn output_dim(&self) -> usize;

    /// Forward map `psi(x)`.
    fn embed(&self, x: &DVector<f64>) -> DVector<f64>;

    /// Gradient with respect to `x` of `uᵀ psi(x)`, i.e. `J(x)ᵀ u` where
    /// `J` is the Jacobian of `psi` at `x`.
    fn input_gradient(&self, x: &DVector<f64>, upstream: &DVector<f64>) -> DVector<f64>;
}

/// Exact operator norm of the Jacobian at one point.
///
/// The Jacobian rows are recovered with `k` upstream basis vectors; the
/// largest singular value is then the square root of the top eigenvalue of
/// the k-by-k Gram matrix `J Jᵀ`. This computes the supremum over unit
/// upstream directions in closed form rather than sampling it, so it is
/// exact (up to eigensolver tolerance) for any differentiable embedder.
fn jacobian_operator_norm(embedder: &dyn Embedder, x: &DVector<f64>) -> Result<f64> {
    let k = embedder.output_dim();
    let d = embedder.input_dim();
    let mut rows: Vec<DVector<f64>> = Vec::with_capacity(k);
    for j in 0..k {
        let mut u = DVector::zeros(k);
        u[j] = 1.0;
        rows.push(embedder.input_gradient(x, &u));
    }
    debug_assert!(rows.iter().all(|r| r.len() == d));
    let gram = DMatrix::from_fn(k, k, |i, j| rows[i].dot(&rows[j]));
    let eig = sym_eig(&gram)?;
    Ok(eig.values[0].max(0.0).sqrt())
}

/// Empirical local Lipschitz constant of an embedder around `x`.
///
/// Evaluates the exact Jacobian operator norm at `n_samples` points inside
/// the closed `radius`-ball around `x` — the first point is `x` itself, the
/// rest are drawn uniformly from the ball — and returns the maximum.
/// Evaluation parallelizes over points; the result depends only on the
/// stream, not the schedule.
pub fn empirical_local_lipschitz(
    embedder: &dyn Embedder,
    x: &DVector<f64>,
    radius: f64,
    n_samples: usize,
    stream: &Stream,
) -> Result<f64> {
    assert!(radius > 0.0, "radius must be positive");
    assert!(n_samples >= 1, "need at least one sample point");
    let d = embedder.input_dim();
    let points: Vec<DVector<f64>> = std::iter::once(x.clone())
        .chain((1..n_samples).map(|i| {
            let mut s = stream.substream(i as u64);
            // Uniform in the ball: direction uniform on the sphere, radius
            // scaled by U^(1/d).
            let dir = DVector::from_vec(s.unit_vector(d));
            let r = radius * s.uniform().powf(1.0 / d as f64);
            x + dir * r
        }))
        .collect();
    let norms = points
        .par_iter()
        .map(|p| jacobian_operator_norm(embedder, p))
        .collect::<Result<Vec<f64>>>()?;
    Ok(norms.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// psi(x) = M x for a fixed matrix, used as a test double.
    struct LinearEmbedder {
        matrix: DMatrix<f64>,
    }

    impl Embedder for LinearEmbedder {
        fn input_dim(&self) -> usize {
            self.matrix.ncols()
        }
        fn output_dim(&self) -> usize {
            self.matrix.nrows()
        }
        fn embed(&self, x: &DVector<f64>) -> DVector<f64> {
            &self.matrix * x
        }
        fn input_gradient(&self, _x: &DVector<f64>, upstream: &DVector<f64>) -> DVector<f64> {
            self.matrix.tr_mul(upstream)
        }
    }

    #[test]
    fn zero_map_has_zero_constant() {
        let e = LinearEmbedder { matrix: DMatrix::zeros(2, 3) };
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let l = empirical_local_lipschitz(&e, &x, 0.5, 16, &Stream::root(1)).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn truncated_diagonal_map_recovers_top_singular_value() {
        // diag(3,1) truncated to its first output row: psi(x) = 3 x_0.
        let e = LinearEmbedder { matrix: DMatrix::from_row_slice(1, 2, &[3.0, 0.0]) };
        let x = DVector::from_vec(vec![0.2, 0.7]);
        let l = empirical_local_lipschitz(&e, &x, 1.0, 8, &Stream::root(2)).unwrap();
        assert_abs_diff_eq!(l, 3.0, epsilon = 1e-6);
    }

    #[test]
    fn full_diagonal_map_recovers_spectral_norm() {
        let e = LinearEmbedder {
            matrix: DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]),
        };
        let x = DVector::zeros(2);
        let l = empirical_local_lipschitz(&e, &x, 1.0, 8, &Stream::root(3)).unwrap();
        assert_abs_diff_eq!(l, 3.0, epsilon = 1e-9);
    }

    #[test]
    fn estimate_is_deterministic() {
        let e = LinearEmbedder {
            matrix: DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 0.0, -1.0, 4.0]),
        };
        let x = DVector::from_vec(vec![0.1, 0.2, 0.3]);
        let a = empirical_local_lipschitz(&e, &x, 0.3, 32, &Stream::root(4)).unwrap();
        let b = empirical_local_lipschitz(&e, &x, 0.3, 32, &Stream::root(4)).unwrap();
        assert_eq!(a, b);
    }
}
