//! k-component PCA embedding with analytic adjoint, plus the relative
//! projection distance and covariance contribution statistics.

use nalgebra::{DMatrix, DVector};

use crate::eigen::{sample_covariance, sym_eig, SymEigen};
use crate::embed::Embedder;
use crate::error::{CoreError, Result};
use crate::synthetic::{Group, HierarchicalGaussianParams, ProjectionBasis};

/// Linear PCA embedder: `psi(x) = Q_kᵀ (x - mean)`.
///
/// Columns of `components` are the leading `k` eigenvectors of a
/// covariance matrix, sign-canonicalized by the eigensolver, so a fitted
/// embedder is fully reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaEmbedder {
    /// Centering vector subtracted before projection.
    pub mean: DVector<f64>,
    /// `d x k` matrix of orthonormal columns.
    pub components: DMatrix<f64>,
    /// Embedding dimension.
    pub k: usize,
}

impl PcaEmbedder {
    /// Builds an embedder from an explicit mean and covariance.
    pub fn from_covariance(mean: DVector<f64>, cov: &DMatrix<f64>, k: usize) -> Result<Self> {
        let d = cov.nrows();
        if k == 0 {
            return Err(CoreError::InvalidParameter {
                name: "k",
                reason: "embedding dimension must be positive".into(),
            });
        }
        if k > d {
            return Err(CoreError::DimensionMismatch { expected: d, got: k });
        }
        if mean.len() != d {
            return Err(CoreError::DimensionMismatch { expected: d, got: mean.len() });
        }
        let eig = sym_eig(cov)?;
        Ok(PcaEmbedder {
            mean,
            components: eig.vectors.columns(0, k).into_owned(),
            k,
        })
    }

    /// Fits an embedder to data given as rows of `data`: sample mean for
    /// centering, leading `k` eigenvectors of the sample covariance as
    /// components.
    pub fn fit(data: &DMatrix<f64>, k: usize) -> Result<Self> {
        let (mean, cov) = sample_covariance(data)?;
        PcaEmbedder::from_covariance(mean, &cov, k)
    }

    /// Adjoint of the linear part: maps `u` in R^k to `Q_k u` in R^d.
    ///
    /// Together with [`Embedder::embed`] it satisfies the adjointness
    /// identity `⟨psi(x), u⟩ = ⟨x - mean, adjoint(u)⟩`.
    pub fn adjoint(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.components * u
    }

    /// Applies only the linear part to a direction (no centering):
    /// `Q_kᵀ dir`. This is the correct image of a *displacement*, for which
    /// `psi(x + t·dir) = psi(x) + t·(Q_kᵀ dir)` for every `t`.
    pub fn project_direction(&self, dir: &DVector<f64>) -> DVector<f64> {
        self.components.tr_mul(dir)
    }

    /// The centering-plus-projection map as a reusable basis object.
    pub fn projection_basis(&self) -> ProjectionBasis {
        ProjectionBasis::new(self.mean.clone(), self.components.clone())
            .expect("embedder dimensions are consistent by construction")
    }

    /// Serializes to rows of numbers: the mean row, then one row per
    /// component (each of length `d`).
    pub fn serialize_rows(&self) -> Vec<Vec<f64>> {
        let mut rows = Vec::with_capacity(self.k + 1);
        rows.push(self.mean.iter().copied().collect());
        for col in self.components.column_iter() {
            rows.push(col.iter().copied().collect());
        }
        rows
    }
}

impl Embedder for PcaEmbedder {
    fn input_dim(&self) -> usize {
        self.mean.len()
    }

    fn output_dim(&self) -> usize {
        self.k
    }

    fn embed(&self, x: &DVector<f64>) -> DVector<f64> {
        self.components.tr_mul(&(x - &self.mean))
    }

    fn input_gradient(&self, _x: &DVector<f64>, upstream: &DVector<f64>) -> DVector<f64> {
        self.adjoint(upstream)
    }
}

/// Which reading of the projection coefficient to use in
/// [`relative_projection_distance`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionMode {
    /// Coefficient `(q_iᵀx) / (‖q_i‖ ‖x‖)` — the cosine form. Requires
    /// `‖x‖ > 0`.
    AsWritten,
    /// Coefficient `q_iᵀx` — standard orthogonal projection onto the
    /// unit eigenvectors.
    Orthogonal,
}

/// Distance of `x` from its reconstruction out of the top `k` eigenvectors,
/// normalized by the total variance of group `g`.
///
/// The numerator is `‖x - Σ_{i≤k} c_i q_i‖₂` with the coefficient `c_i`
/// chosen by `mode`; the denominator is the diagonal sum of `Sigma_g`.
/// Both coefficient readings are supported because the cosine form is a
/// plausible variant of plain orthogonal projection; callers choose.
pub fn relative_projection_distance(
    x: &DVector<f64>,
    eig: &SymEigen,
    params: &HierarchicalGaussianParams,
    group: Group,
    k: usize,
    mode: ProjectionMode,
) -> Result<f64> {
    params.validate()?;
    let d = eig.dim();
    if x.len() != d {
        return Err(CoreError::DimensionMismatch { expected: d, got: x.len() });
    }
    if k > d {
        return Err(CoreError::DimensionMismatch { expected: d, got: k });
    }
    let x_norm = x.norm();
    if mode == ProjectionMode::AsWritten && x_norm == 0.0 {
        return Err(CoreError::SingularConfiguration(
            "relative projection distance in cosine mode is undefined at x = 0".into(),
        ));
    }
    let mut residual = x.clone();
    for i in 0..k {
        let q = eig.vectors.column(i);
        let coeff = match mode {
            ProjectionMode::AsWritten => q.dot(x) / (q.norm() * x_norm),
            ProjectionMode::Orthogonal => q.dot(x),
        };
        residual -= q * coeff;
    }
    let denominator = params.sigma_trace(group);
    Ok(residual.norm() / denominator)
}

/// Total embedded variance budget of group `g` for a `k`-dimensional
/// embedding: `beta + Σ_{i=1..k} (Sigma_g)_{ii}`.
pub fn covariance_contribution(
    params: &HierarchicalGaussianParams,
    group: Group,
    k: usize,
) -> Result<f64> {
    params.validate()?;
    if k > params.d {
        return Err(CoreError::DimensionMismatch { expected: params.d, got: k });
    }
    let diag = params.sigma_diag(group);
    Ok(params.beta + diag.iter().take(k).sum::<f64>())
}

/// Fits a PCA embedder directly to all images of a dataset.
pub fn fit_pca_to_dataset(
    dataset: &crate::synthetic::SyntheticDataset,
    k: usize,
) -> Result<PcaEmbedder> {
    PcaEmbedder::fit(&dataset.image_matrix(), k)
}
