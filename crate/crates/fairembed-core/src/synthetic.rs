//! Two-group hierarchical Gaussian model: parameters, sampling, and group
//! likelihoods.
//!
//! Group `a` identities are drawn from `N(mu_a, gamma * Sigma_b)` and group
//! `b` identities from `N(-mu_a, Sigma_b)`, with `Sigma_b` diagonal. Each
//! identity then yields exactly `m` images `x ~ N(nu, beta * I)`. The
//! mixture weight `alpha` does not drive sample counts (those are explicit
//! per-group identity counts); it enters only as the class prior in
//! [`classify_group`].
//!
//! Sampling is partitioned into substreams keyed by (stage, group,
//! identity, image), so datasets are bitwise-identical across thread
//! counts and schedules.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::eigen::sym_eig;
use crate::error::{CoreError, Result};
use crate::stream::Stream;

/// Tolerance for `‖mu_a‖ = 1`.
const UNIT_NORM_TOL: f64 = 1e-12;

/// Log-posterior gap below which [`classify_group`] declares a tie.
const TIE_TOL: f64 = 1e-12;

/// The two demographic groups of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    A,
    B,
}

impl Group {
    /// Stable integer label used for substream derivation and CSV output.
    pub fn code(self) -> u64 {
        match self {
            Group::A => 0,
            Group::B => 1,
        }
    }

    /// The opposite group.
    pub fn other(self) -> Group {
        match self {
            Group::A => Group::B,
            Group::B => Group::A,
        }
    }

    /// Both groups, in canonical order.
    pub fn both() -> [Group; 2] {
        [Group::A, Group::B]
    }
}

impl std::fmt::Display for Group {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Group::A => "a",
            Group::B => "b",
        })
    }
}

/// Parameters of the two-group hierarchical Gaussian model.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalGaussianParams {
    /// Ambient dimension.
    pub d: usize,
    /// Covariance ratio: `Sigma_a = gamma * Sigma_b`. Must be positive.
    pub gamma: f64,
    /// Image noise scale: images are `N(nu, beta * I)`. Must be positive.
    pub beta: f64,
    /// Mixture weight of group `a`, in (0,1). Used only as the class prior.
    pub alpha: f64,
    /// Mean of group `a`; group `b` uses its negation. Must be unit norm.
    pub mu_a: DVector<f64>,
    /// Diagonal of `Sigma_b`; all entries strictly positive, length `d`.
    pub sigma_b_diag: DVector<f64>,
    /// Number of identities sampled for group `a`.
    pub n_identities_a: usize,
    /// Number of identities sampled for group `b`.
    pub n_identities_b: usize,
    /// Images drawn per identity. Must be at least 1.
    pub m: usize,
    /// Master seed for the sampling streams.
    pub seed: u64,
}

impl HierarchicalGaussianParams {
    /// Checks all structural invariants, returning the first violation.
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(CoreError::InvalidParameter {
                name: "d",
                reason: "dimension must be positive".into(),
            });
        }
        if !(self.gamma > 0.0) {
            return Err(CoreError::InvalidParameter {
                name: "gamma",
                reason: format!("must be positive, got {}", self.gamma),
            });
        }
        if !(self.beta > 0.0) {
            return Err(CoreError::InvalidParameter {
                name: "beta",
                reason: format!("must be positive, got {}", self.beta),
            });
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CoreError::InvalidParameter {
                name: "alpha",
                reason: format!("must lie in (0,1), got {}", self.alpha),
            });
        }
        if self.mu_a.len() != self.d {
            return Err(CoreError::DimensionMismatch {
                expected: self.d,
                got: self.mu_a.len(),
            });
        }
        if (self.mu_a.norm() - 1.0).abs() > UNIT_NORM_TOL {
            return Err(CoreError::InvalidParameter {
                name: "mu_a",
                reason: format!("must be unit norm, got ‖mu_a‖ = {}", self.mu_a.norm()),
            });
        }
        if self.sigma_b_diag.len() != self.d {
            return Err(CoreError::DimensionMismatch {
                expected: self.d,
                got: self.sigma_b_diag.len(),
            });
        }
        if let Some(bad) = self.sigma_b_diag.iter().find(|&&v| !(v > 0.0)) {
            return Err(CoreError::InvalidParameter {
                name: "sigma_b_diag",
                reason: format!("all entries must be positive, found {bad}"),
            });
        }
        if self.m == 0 {
            return Err(CoreError::InvalidParameter {
                name: "m",
                reason: "at least one image per identity is required".into(),
            });
        }
        Ok(())
    }

    /// Mean of the identity distribution for a group.
    pub fn mu(&self, group: Group) -> DVector<f64> {
        match group {
            Group::A => self.mu_a.clone(),
            Group::B => -self.mu_a.clone(),
        }
    }

    /// Diagonal of the identity covariance `Sigma_g` for a group.
    pub fn sigma_diag(&self, group: Group) -> DVector<f64> {
        match group {
            Group::A => &self.sigma_b_diag * self.gamma,
            Group::B => self.sigma_b_diag.clone(),
        }
    }

    /// Sum of the diagonal of `Sigma_g`.
    pub fn sigma_trace(&self, group: Group) -> f64 {
        self.sigma_diag(group).sum()
    }

    /// Diagonal of the total per-image covariance `Sigma_g + beta * I`.
    pub fn total_image_cov_diag(&self, group: Group) -> DVector<f64> {
        self.sigma_diag(group).add_scalar(self.beta)
    }

    /// Class prior of a group: `alpha` for `a`, `1 - alpha` for `b`.
    pub fn prior(&self, group: Group) -> f64 {
        match group {
            Group::A => self.alpha,
            Group::B => 1.0 - self.alpha,
        }
    }

    /// Number of identities sampled for a group.
    pub fn n_identities(&self, group: Group) -> usize {
        match group {
            Group::A => self.n_identities_a,
            Group::B => self.n_identities_b,
        }
    }
}

/// Globally unique identity label shared by the matching and attack
/// modules: `2 * identity_index + group_code`. Within-group ordering is
/// preserved and the two groups interleave.
pub fn global_identity(group: Group, identity_index: usize) -> usize {
    2 * identity_index + group.code() as usize
}

/// One sampled identity: the latent mean its images scatter around.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityRecord {
    pub group: Group,
    /// Index unique within the group, in `[0, n_identities_g)`.
    pub identity_index: usize,
    /// Latent identity vector `nu` in R^d.
    pub nu: DVector<f64>,
}

/// One sampled image of an identity.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub group: Group,
    pub identity_index: usize,
    /// Index within the identity, in `[0, m)`.
    pub image_index: usize,
    /// Observed image vector `x` in R^d.
    pub x: DVector<f64>,
}

/// A fully sampled dataset: identities plus exactly `m` images each.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub params: HierarchicalGaussianParams,
    pub identities: Vec<IdentityRecord>,
    pub images: Vec<ImageSample>,
}

impl SyntheticDataset {
    /// Samples identities and images from `params` using substreams of
    /// `stream` (stages "identities" and "images").
    pub fn sample(params: &HierarchicalGaussianParams, stream: &Stream) -> Result<Self> {
        let identities = sample_identities(params, &stream.substream_named("identities"))?;
        sample_images(&identities, params, &stream.substream_named("images"))
    }

    /// All images as rows of a matrix, in dataset order.
    pub fn image_matrix(&self) -> DMatrix<f64> {
        let n = self.images.len();
        let d = self.params.d;
        DMatrix::from_fn(n, d, |i, j| self.images[i].x[j])
    }

    /// Images belonging to one group, in dataset order.
    pub fn images_of_group(&self, group: Group) -> impl Iterator<Item = &ImageSample> {
        self.images.iter().filter(move |img| img.group == group)
    }

    /// The identity record for a (group, identity_index) pair.
    pub fn identity(&self, group: Group, identity_index: usize) -> Result<&IdentityRecord> {
        self.identities
            .iter()
            .find(|id| id.group == group && id.identity_index == identity_index)
            .ok_or(CoreError::UnknownIdentity(identity_index))
    }
}

/// Substream for one identity's latent vector.
fn identity_stream(stream: &Stream, group: Group, identity_index: usize) -> Stream {
    stream.substream(group.code()).substream(identity_index as u64)
}

/// Substream for one image of one identity.
fn image_stream(stream: &Stream, group: Group, identity_index: usize, image_index: usize) -> Stream {
    stream
        .substream(group.code())
        .substream(identity_index as u64)
        .substream(image_index as u64)
}

/// Draws `N(mean, diag(var))` using one substream.
fn diagonal_gaussian(mut s: Stream, mean: &DVector<f64>, var_diag: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(mean.len(), |j, _| mean[j] + var_diag[j].sqrt() * {
        // from_fn visits indices in order, so draws are sequential.
        s.standard_normal()
    })
}

/// Samples the latent identity vectors for both groups.
///
/// Group `a` gets `n_identities_a` draws from `N(mu_a, gamma * Sigma_b)`,
/// group `b` gets `n_identities_b` draws from `N(-mu_a, Sigma_b)`. Each
/// identity has its own substream, so the output is independent of
/// evaluation order and thread count.
pub fn sample_identities(
    params: &HierarchicalGaussianParams,
    stream: &Stream,
) -> Result<Vec<IdentityRecord>> {
    params.validate()?;
    let mut records = Vec::with_capacity(params.n_identities_a + params.n_identities_b);
    for group in Group::both() {
        let mu = params.mu(group);
        let var = params.sigma_diag(group);
        let n = params.n_identities(group);
        let group_records: Vec<IdentityRecord> = (0..n)
            .into_par_iter()
            .map(|i| IdentityRecord {
                group,
                identity_index: i,
                nu: diagonal_gaussian(identity_stream(stream, group, i), &mu, &var),
            })
            .collect();
        records.extend(group_records);
    }
    Ok(records)
}

/// Samples exactly `m` images `x ~ N(nu, beta * I)` for every identity.
pub fn sample_images(
    identities: &[IdentityRecord],
    params: &HierarchicalGaussianParams,
    stream: &Stream,
) -> Result<SyntheticDataset> {
    params.validate()?;
    if identities.is_empty() {
        return Err(CoreError::EmptyInput("sample_images: identities"));
    }
    let noise = DVector::from_element(params.d, params.beta);
    let images: Vec<ImageSample> = identities
        .par_iter()
        .flat_map_iter(|id| {
            let noise = &noise;
            (0..params.m).map(move |j| ImageSample {
                group: id.group,
                identity_index: id.identity_index,
                image_index: j,
                x: diagonal_gaussian(
                    image_stream(stream, id.group, id.identity_index, j),
                    &id.nu,
                    noise,
                ),
            })
        })
        .collect();
    Ok(SyntheticDataset {
        params: params.clone(),
        identities: identities.to_vec(),
        images,
    })
}

/// A linear projection `R^d -> R^p` with centering: `v = Bᵀ(x - offset)`.
///
/// Used to push the model's Gaussians into an embedding space when
/// evaluating likelihoods. The identity map corresponds to `offset = 0`,
/// `B = I`, which callers express by passing `None` where a basis is
/// optional.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionBasis {
    /// Centering offset subtracted before projecting.
    pub offset: DVector<f64>,
    /// `d x p` matrix whose columns span the projection image.
    pub matrix: DMatrix<f64>,
}

impl ProjectionBasis {
    pub fn new(offset: DVector<f64>, matrix: DMatrix<f64>) -> Result<Self> {
        if offset.len() != matrix.nrows() {
            return Err(CoreError::DimensionMismatch {
                expected: matrix.nrows(),
                got: offset.len(),
            });
        }
        Ok(ProjectionBasis { offset, matrix })
    }

    /// Output dimension `p`.
    pub fn output_dim(&self) -> usize {
        self.matrix.ncols()
    }

    /// Applies the projection: `Bᵀ(x - offset)`.
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        self.matrix.tr_mul(&(x - &self.offset))
    }

    /// Pushforward of `N(mean, diag(cov_diag))` through the projection:
    /// mean `Bᵀ(mean - offset)`, covariance `Bᵀ diag(cov_diag) B`.
    pub fn pushforward(
        &self,
        mean: &DVector<f64>,
        cov_diag: &DVector<f64>,
    ) -> (DVector<f64>, DMatrix<f64>) {
        let p_mean = self.project(mean);
        let scaled = DMatrix::from_fn(self.matrix.nrows(), self.matrix.ncols(), |i, j| {
            self.matrix[(i, j)] * cov_diag[i]
        });
        let p_cov = self.matrix.tr_mul(&scaled);
        (p_mean, p_cov)
    }
}

/// Log density of `N(mean, cov)` at `v`, for symmetric positive-definite
/// `cov`. Degenerate covariance (any eigenvalue at or below zero, or more
/// than 15 orders of magnitude below the largest) is rejected.
pub fn gaussian_log_density(
    v: &DVector<f64>,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> Result<f64> {
    let p = mean.len();
    if v.len() != p {
        return Err(CoreError::DimensionMismatch { expected: p, got: v.len() });
    }
    let eig = sym_eig(cov)?;
    let lambda_max = eig.values[0];
    let mut log_det = 0.0;
    for &l in eig.values.iter() {
        if !(l > 0.0) || l < lambda_max * 1e-15 {
            return Err(CoreError::DegenerateCovariance(format!(
                "eigenvalue {l} too small relative to {lambda_max}"
            )));
        }
        log_det += l.ln();
    }
    let u = eig.vectors.tr_mul(&(v - mean));
    let quad: f64 = u.iter().zip(eig.values.iter()).map(|(ui, li)| ui * ui / li).sum();
    Ok(-0.5 * (p as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + quad))
}

/// Log density of the diagonal Gaussian `N(mean, diag(var_diag))` at `v`.
fn diagonal_log_density(
    v: &DVector<f64>,
    mean: &DVector<f64>,
    var_diag: &DVector<f64>,
) -> Result<f64> {
    let p = mean.len();
    if v.len() != p {
        return Err(CoreError::DimensionMismatch { expected: p, got: v.len() });
    }
    let mut acc = -0.5 * p as f64 * (2.0 * std::f64::consts::PI).ln();
    for j in 0..p {
        let var = var_diag[j];
        if !(var > 0.0) {
            return Err(CoreError::DegenerateCovariance(format!(
                "variance {var} at coordinate {j}"
            )));
        }
        let z = v[j] - mean[j];
        acc -= 0.5 * (var.ln() + z * z / var);
    }
    Ok(acc)
}

/// Log density of group `g`'s image distribution at an embedded point `v`.
///
/// The image distribution of group `g` is `N(mu_g, Sigma_g + beta * I)`
/// (identity hyperprior plus image noise); with `basis = Some(b)` the
/// density is evaluated for the pushforward through `b`, with `basis =
/// None` in the ambient space. `v` must live in the projected space.
pub fn group_log_likelihood(
    v: &DVector<f64>,
    params: &HierarchicalGaussianParams,
    group: Group,
    basis: Option<&ProjectionBasis>,
) -> Result<f64> {
    let mean = params.mu(group);
    let cov_diag = params.total_image_cov_diag(group);
    match basis {
        None => diagonal_log_density(v, &mean, &cov_diag),
        Some(b) => {
            let (p_mean, p_cov) = b.pushforward(&mean, &cov_diag);
            if b.output_dim() == 1 {
                // Scalar fast path avoids the eigensolver.
                diagonal_log_density(v, &p_mean, &DVector::from_element(1, p_cov[(0, 0)]))
            } else {
                gaussian_log_density(v, &p_mean, &p_cov)
            }
        }
    }
}

/// Maximum-posterior group of an embedded point, with a tie flag.
///
/// Compares `ln(prior_g) + log p_g(v)` across the two groups; a gap below
/// `1e-12` counts as a tie and resolves to group `a` so that outputs are
/// deterministic. The boolean is `true` when the tie rule fired.
pub fn classify_group_flagged(
    v: &DVector<f64>,
    params: &HierarchicalGaussianParams,
    basis: Option<&ProjectionBasis>,
) -> Result<(Group, bool)> {
    let score_a = params.alpha.ln() + group_log_likelihood(v, params, Group::A, basis)?;
    let score_b = (1.0 - params.alpha).ln() + group_log_likelihood(v, params, Group::B, basis)?;
    let diff = score_a - score_b;
    if diff.abs() < TIE_TOL {
        Ok((Group::A, true))
    } else if diff > 0.0 {
        Ok((Group::A, false))
    } else {
        Ok((Group::B, false))
    }
}

/// Maximum-posterior group of an embedded point (tie -> group `a`).
pub fn classify_group(
    v: &DVector<f64>,
    params: &HierarchicalGaussianParams,
    basis: Option<&ProjectionBasis>,
) -> Result<Group> {
    classify_group_flagged(v, params, basis).map(|(g, _)| g)
}

#[cfg(test)]
pub(crate) fn test_params(d: usize, gamma: f64) -> HierarchicalGaussianParams {
    let mut mu = DVector::zeros(d);
    mu[0] = 1.0;
    HierarchicalGaussianParams {
        d,
        gamma,
        beta: 0.1,
        alpha: 0.5,
        mu_a: mu,
        sigma_b_diag: DVector::from_element(d, 1.0),
        n_identities_a: 4,
        n_identities_b: 4,
        m: 3,
        seed: 7,
    }
}
