//! Closed-form feasibility analysis for pushing a group-a point across
//! the one-dimensional likelihood boundary toward group b, audited by a
//! density-scan oracle.
//!
//! The two endpoint formulas and the budget bound are kept exactly in
//! their original algebraic arrangement — including the sign asymmetry
//! between the lower and upper square-root terms — and are never
//! corrected in place. An independent quadratic root solve and a
//! grid-scan likelihood oracle run alongside them, and [`audit_bound`]
//! reports every disagreement (soundness violations, root residuals) as
//! data rather than as assertions, so the closed forms can be judged
//! empirically downstream.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::csvfmt;
use crate::embed::Embedder;
use crate::error::{CoreError, Result};
use crate::pca::PcaEmbedder;
use crate::stream::Stream;
use crate::synthetic::{Group, HierarchicalGaussianParams};

/// Scalar summary of one configuration in the projected (1-D) analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    /// Embedded source point, `a = psi(x)`.
    pub a: f64,
    /// Linear image of the unit direction toward `mu_b`,
    /// `b = psi_linear((mu_b - x) / ‖mu_b - x‖)`.
    pub b: f64,
    /// Identity-covariance ratio, strictly inside (0, 1).
    pub gamma: f64,
    /// Embedded opposite-group mean, `psi(mu_b)`.
    pub psi_mu_b: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(CoreError::SingularConfiguration(format!(
                "gamma must lie strictly inside (0,1); got {} (gamma = 1 makes the \
                 closed forms singular)",
                self.gamma
            )));
        }
        if self.b == 0.0 || !self.b.is_finite() {
            return Err(CoreError::SingularConfiguration(format!(
                "direction coefficient b must be finite and nonzero, got {}",
                self.b
            )));
        }
        if !self.a.is_finite() || !self.psi_mu_b.is_finite() {
            return Err(CoreError::NumericFailure(
                "bound inputs must be finite".into(),
            ));
        }
        Ok(())
    }

    /// Builds the scalar inputs from a 1-D projection embedder, a source
    /// point, and the model parameters.
    ///
    /// `a` and `psi_mu_b` use the full (centered) embedding; `b` uses
    /// only the linear part, because it multiplies a displacement.
    pub fn from_projection(
        embedder: &PcaEmbedder,
        x: &DVector<f64>,
        params: &HierarchicalGaussianParams,
    ) -> Result<Self> {
        if embedder.k != 1 {
            return Err(CoreError::DimensionMismatch {
                expected: 1,
                got: embedder.k,
            });
        }
        let mu_b = params.mu(Group::B);
        let toward = &mu_b - x;
        let len = toward.norm();
        if len < 1e-12 {
            return Err(CoreError::SingularConfiguration(
                "source point coincides with mu_b; the attack direction is undefined".into(),
            ));
        }
        let inputs = BoundInputs {
            a: embedder.embed(x)[0],
            b: embedder.project_direction(&(toward / len))[0],
            gamma: params.gamma,
            psi_mu_b: embedder.embed(&mu_b)[0],
        };
        inputs.validate()?;
        Ok(inputs)
    }
}

/// A closed interval of step sizes η, with emptiness representable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaInterval {
    Empty,
    Range { lower: f64, upper: f64 },
}

impl EtaInterval {
    pub fn is_empty(&self) -> bool {
        matches!(self, EtaInterval::Empty)
    }

    /// The endpoints of a nonempty interval.
    pub fn endpoints(&self) -> Option<(f64, f64)> {
        match *self {
            EtaInterval::Empty => None,
            EtaInterval::Range { lower, upper } => Some((lower, upper)),
        }
    }
}

/// Shared square-root term of the closed forms, kept in its original
/// shape `sqrt(a² γ / (b² (γ−1)²))` rather than simplified.
fn closed_form_sqrt(i: &BoundInputs) -> f64 {
    let g1 = i.gamma - 1.0;
    (i.a * i.a * i.gamma / (i.b * i.b * g1 * g1)).sqrt()
}

/// Closed-form η interval, endpoints evaluated exactly in their original
/// arrangement and ordered before return.
///
/// The lower endpoint carries `2b(1−γ)·√·` while the upper carries
/// `2b(γ−1)·√·`; that sign asymmetry is preserved deliberately. Use
/// [`boundary_quadratic_roots`] for an independently solved version of
/// the same boundary, and [`audit_bound`] to compare them.
pub fn eta_interval(inputs: &BoundInputs) -> Result<EtaInterval> {
    inputs.validate()?;
    let BoundInputs { a, b, gamma, psi_mu_b } = *inputs;
    let root = closed_form_sqrt(inputs);
    let shared = a * gamma + a + psi_mu_b * (1.0 - gamma);
    let denom = b * (gamma - 1.0);
    let first = (2.0 * b * (1.0 - gamma) * root + shared) / denom;
    let second = (2.0 * b * (gamma - 1.0) * root + shared) / denom;
    Ok(EtaInterval::Range {
        lower: first.min(second),
        upper: first.max(second),
    })
}

/// Closed-form perturbation-budget threshold: budgets strictly below the
/// returned value cannot reach the boundary (by the closed-form account).
///
/// Evaluates `max{0, (2b(γ−1)√· + aγ + a + ψ(μ_b)(1−γ)) / (b(γ−1))}` in
/// its original arrangement. Soundness against the scan oracle is a
/// reported quantity, not an assumption; see [`audit_bound`].
pub fn epsilon_infeasibility_bound(inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    let BoundInputs { a, b, gamma, psi_mu_b } = *inputs;
    let root = closed_form_sqrt(inputs);
    let inner =
        (2.0 * b * (gamma - 1.0) * root + a * gamma + a + psi_mu_b * (1.0 - gamma))
            / (b * (gamma - 1.0));
    Ok(inner.max(0.0))
}

/// Residual of the likelihood-boundary quadratic at a given step size:
/// `γ(v−m)² − (v+m)²` with `v = a + ηb` and `m = ψ(μ_b)`. Roots of this
/// function are exactly the boundary crossings of the equal-variance-free
/// density comparison; closed-form endpoints that genuinely solve the
/// boundary must drive it to zero.
pub fn boundary_quadratic(inputs: &BoundInputs, eta: f64) -> f64 {
    let v = inputs.a + eta * inputs.b;
    let m = inputs.psi_mu_b;
    inputs.gamma * (v - m) * (v - m) - (v + m) * (v + m)
}

/// Independently solved roots of [`boundary_quadratic`], ordered.
///
/// In `v` the boundary reads `(γ−1)v² − 2m(γ+1)v + (γ−1)m² = 0`, whose
/// roots are `v = (m(γ+1) ± 2|m|√γ) / (γ−1)`; mapping back through
/// `η = (v − a)/b` gives the step-size roots. The discriminant `4γm²` is
/// never negative, so the interval is nonempty whenever the inputs are
/// valid.
pub fn boundary_quadratic_roots(inputs: &BoundInputs) -> Result<EtaInterval> {
    inputs.validate()?;
    let BoundInputs { a, b, gamma, psi_mu_b: m } = *inputs;
    let g1 = gamma - 1.0;
    let spread = 2.0 * m.abs() * gamma.sqrt();
    let v_first = (m * (gamma + 1.0) + spread) / g1;
    let v_second = (m * (gamma + 1.0) - spread) / g1;
    let eta_first = (v_first - a) / b;
    let eta_second = (v_second - a) / b;
    Ok(EtaInterval::Range {
        lower: eta_first.min(eta_second),
        upper: eta_first.max(eta_second),
    })
}

/// Grid specification for the scan oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// Scan endpoint (inclusive up to rounding).
    pub max_eta: f64,
    /// Step between scanned values. Positive.
    pub resolution: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { max_eta: 10.0, resolution: 1e-3 }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0) {
            return Err(CoreError::InvalidParameter {
                name: "resolution",
                reason: format!("must be positive, got {}", self.resolution),
            });
        }
        if !(self.max_eta >= 0.0) {
            return Err(CoreError::InvalidParameter {
                name: "max_eta",
                reason: format!("must be nonnegative, got {}", self.max_eta),
            });
        }
        Ok(())
    }
}

/// Oracle density options.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OracleOptions {
    /// Adds the per-image noise `β` to both projected variances. Off by
    /// default so the comparison runs at the identity level.
    pub include_beta: bool,
    /// Weights each density by its group prior (`α`, `1−α`). Off by
    /// default: the comparison is between raw densities, not posteriors.
    pub include_prior: bool,
}

/// Log-density of a scalar Gaussian.
fn ln_normal_density(v: f64, mean: f64, variance: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * variance).ln() - (v - mean) * (v - mean) / (2.0 * variance)
}

/// Projected group mean and variance for the 1-D oracle densities.
fn projected_moments(
    embedder: &PcaEmbedder,
    params: &HierarchicalGaussianParams,
    group: Group,
    include_beta: bool,
) -> (f64, f64) {
    let mean = embedder.embed(&params.mu(group))[0];
    let q = embedder.components.column(0);
    let diag = if include_beta {
        params.total_image_cov_diag(group)
    } else {
        params.sigma_diag(group)
    };
    let variance = q.iter().zip(diag.iter()).map(|(qj, dj)| qj * qj * dj).sum();
    (mean, variance)
}

/// Smallest step η ≥ 0 along the unit direction from `x` toward `mu_b`
/// at which the projected group-b density strictly exceeds group-a, found
/// by scanning `[0, max_eta]` at the grid resolution. `None` when no
/// crossing occurs within the scanned range.
pub fn likelihood_ratio_oracle(
    x: &DVector<f64>,
    params: &HierarchicalGaussianParams,
    embedder: &PcaEmbedder,
    grid: &GridSpec,
    options: &OracleOptions,
) -> Result<Option<f64>> {
    grid.validate()?;
    if embedder.k != 1 {
        return Err(CoreError::DimensionMismatch { expected: 1, got: embedder.k });
    }
    if !(params.gamma <= 1.0) {
        return Err(CoreError::InvalidParameter {
            name: "gamma",
            reason: format!("oracle requires gamma <= 1, got {}", params.gamma),
        });
    }
    let mu_b = params.mu(Group::B);
    let toward = &mu_b - x;
    let len = toward.norm();
    if len < 1e-12 {
        return Err(CoreError::SingularConfiguration(
            "source point coincides with mu_b; the scan direction is undefined".into(),
        ));
    }
    let direction = toward / len;

    let (mean_a, var_a) = projected_moments(embedder, params, Group::A, options.include_beta);
    let (mean_b, var_b) = projected_moments(embedder, params, Group::B, options.include_beta);
    if !(var_a > 0.0 && var_b > 0.0) {
        return Err(CoreError::DegenerateCovariance(
            "projected variance must be positive for the density scan".into(),
        ));
    }
    let (prior_a, prior_b) = if options.include_prior {
        (params.alpha.ln(), (1.0 - params.alpha).ln())
    } else {
        (0.0, 0.0)
    };

    // The group-a density must dominate at the group-a mean, otherwise a
    // "crossing toward b" is meaningless for this configuration.
    let at_mu_a = embedder.embed(&params.mu(Group::A))[0];
    if ln_normal_density(at_mu_a, mean_a, var_a) + prior_a
        <= ln_normal_density(at_mu_a, mean_b, var_b) + prior_b
    {
        return Err(CoreError::InvalidParameter {
            name: "params",
            reason: "group-b density already dominates at mu_a; no boundary to cross".into(),
        });
    }

    let steps = (grid.max_eta / grid.resolution).floor() as usize;
    let linear_step = embedder.project_direction(&direction)[0];
    let v0 = embedder.embed(x)[0];
    for i in 0..=steps {
        let eta = i as f64 * grid.resolution;
        let v = v0 + eta * linear_step;
        let ln_pa = ln_normal_density(v, mean_a, var_a) + prior_a;
        let ln_pb = ln_normal_density(v, mean_b, var_b) + prior_b;
        if ln_pb > ln_pa {
            return Ok(Some(eta));
        }
    }
    Ok(None)
}

/// One configuration to audit: model parameters plus a concrete source
/// point.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditCase {
    pub config_id: usize,
    pub params: HierarchicalGaussianParams,
    pub x: DVector<f64>,
}

/// Per-configuration audit outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditRow {
    pub config_id: usize,
    pub gamma: f64,
    pub a: f64,
    pub b: f64,
    pub psi_mu_b: f64,
    /// Closed-form budget threshold.
    pub bound: f64,
    /// First scanned η where the group-b density wins, if any.
    pub oracle_crossing: Option<f64>,
    /// `crossing − bound` where the crossing exists. Negative slack
    /// beyond the grid resolution is a soundness violation.
    pub slack: Option<f64>,
    pub violation: bool,
    /// Closed-form endpoints as evaluated.
    pub eta_lower: f64,
    pub eta_upper: f64,
    /// Independently solved boundary roots.
    pub root_lower: f64,
    pub root_upper: f64,
    /// Largest |boundary residual| over the two closed-form endpoints.
    pub max_root_residual: f64,
}

/// Aggregate audit statistics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AuditSummary {
    pub n_cases: usize,
    pub n_violations: usize,
    pub min_slack: Option<f64>,
    pub mean_slack: Option<f64>,
    /// Largest closed-form endpoint residual across all rows.
    pub max_root_residual: f64,
    /// Largest distance between a closed-form endpoint and its matching
    /// independently solved root.
    pub max_endpoint_root_gap: f64,
}

/// Full audit output: ordered per-case rows plus summary statistics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AuditReport {
    pub rows: Vec<AuditRow>,
    pub summary: AuditSummary,
}

pub const AUDIT_CSV_HEADER: &str =
    "config_id,gamma,a,b,psi_mu_b,bound,oracle_crossing,slack,violation";

impl AuditReport {
    /// Renders the audit as CSV (one row per configuration, fixed column
    /// set; absent crossings serialize as empty fields).
    pub fn to_csv(&self) -> String {
        let rows: Vec<String> = self
            .rows
            .iter()
            .map(|r| {
                csvfmt::join_row(&[
                    r.config_id.to_string(),
                    csvfmt::fmt_f64(r.gamma),
                    csvfmt::fmt_f64(r.a),
                    csvfmt::fmt_f64(r.b),
                    csvfmt::fmt_f64(r.psi_mu_b),
                    csvfmt::fmt_f64(r.bound),
                    r.oracle_crossing.map(csvfmt::fmt_f64).unwrap_or_default(),
                    r.slack.map(csvfmt::fmt_f64).unwrap_or_default(),
                    r.violation.to_string(),
                ])
            })
            .collect();
        csvfmt::document(AUDIT_CSV_HEADER, &rows)
    }
}

/// Population covariance of the image distribution: the prior-weighted
/// mixture of per-group image covariances plus the between-group spread
/// around the mixture mean.
pub fn population_covariance(params: &HierarchicalGaussianParams) -> DMatrix<f64> {
    let d = params.d;
    let mu_a = params.mu(Group::A);
    let mu_b = params.mu(Group::B);
    let mean = &mu_a * params.alpha + &mu_b * (1.0 - params.alpha);
    let mut cov = DMatrix::zeros(d, d);
    for (group, weight) in [(Group::A, params.alpha), (Group::B, 1.0 - params.alpha)] {
        let diag = params.total_image_cov_diag(group);
        for j in 0..d {
            cov[(j, j)] += weight * diag[j];
        }
        let centered = params.mu(group) - &mean;
        cov += (&centered * centered.transpose()) * weight;
    }
    cov
}

/// Leading-component (k = 1) projection embedder fitted to the population
/// covariance — the embedder the audit inspects by default.
pub fn leading_component_embedder(params: &HierarchicalGaussianParams) -> Result<PcaEmbedder> {
    let cov = population_covariance(params);
    let mu_a = params.mu(Group::A);
    let mu_b = params.mu(Group::B);
    let mean = &mu_a * params.alpha + &mu_b * (1.0 - params.alpha);
    PcaEmbedder::from_covariance(mean, &cov, 1)
}

fn audit_one(case: &AuditCase, grid: &GridSpec, options: &OracleOptions) -> Result<AuditRow> {
    case.params.validate()?;
    let embedder = leading_component_embedder(&case.params)?;
    let inputs = BoundInputs::from_projection(&embedder, &case.x, &case.params)?;
    let bound = epsilon_infeasibility_bound(&inputs)?;
    let crossing = likelihood_ratio_oracle(&case.x, &case.params, &embedder, grid, options)?;
    let slack = crossing.map(|c| c - bound);
    let violation = crossing.is_some_and(|c| c < bound - grid.resolution);
    let (eta_lower, eta_upper) = eta_interval(&inputs)?
        .endpoints()
        .expect("closed-form interval is always nonempty for valid inputs");
    let (root_lower, root_upper) = boundary_quadratic_roots(&inputs)?
        .endpoints()
        .expect("boundary discriminant is never negative");
    let max_root_residual = boundary_quadratic(&inputs, eta_lower)
        .abs()
        .max(boundary_quadratic(&inputs, eta_upper).abs());
    Ok(AuditRow {
        config_id: case.config_id,
        gamma: inputs.gamma,
        a: inputs.a,
        b: inputs.b,
        psi_mu_b: inputs.psi_mu_b,
        bound,
        oracle_crossing: crossing,
        slack,
        violation,
        eta_lower,
        eta_upper,
        root_lower,
        root_upper,
        max_root_residual,
    })
}

/// Audits every configuration: closed-form bound versus scan-oracle
/// crossing, and closed-form endpoints versus independently solved
/// boundary roots. Violations are report content, never errors. Cases
/// audit in parallel; rows keep the input order.
pub fn audit_bound(
    cases: &[AuditCase],
    grid: &GridSpec,
    options: &OracleOptions,
) -> Result<AuditReport> {
    grid.validate()?;
    let rows: Vec<AuditRow> = cases
        .par_iter()
        .map(|case| audit_one(case, grid, options))
        .collect::<Result<_>>()?;

    let slacks: Vec<f64> = rows.iter().filter_map(|r| r.slack).collect();
    let summary = AuditSummary {
        n_cases: rows.len(),
        n_violations: rows.iter().filter(|r| r.violation).count(),
        min_slack: slacks.iter().copied().reduce(f64::min),
        mean_slack: if slacks.is_empty() {
            None
        } else {
            Some(slacks.iter().sum::<f64>() / slacks.len() as f64)
        },
        max_root_residual: rows.iter().map(|r| r.max_root_residual).fold(0.0, f64::max),
        max_endpoint_root_gap: rows
            .iter()
            .map(|r| {
                (r.eta_lower - r.root_lower)
                    .abs()
                    .max((r.eta_upper - r.root_upper).abs())
            })
            .fold(0.0, f64::max),
    };
    Ok(AuditReport { rows, summary })
}

/// Deterministic sweep of audit configurations: `gamma` values cycle
/// through `gammas`, direction and scales vary per case, and each source
/// point is a genuine group-a image draw (identity scatter plus image
/// noise).
pub fn seeded_sweep(
    n_cases: usize,
    gammas: &[f64],
    d: usize,
    stream: &Stream,
) -> Result<Vec<AuditCase>> {
    if gammas.is_empty() {
        return Err(CoreError::EmptyInput("seeded_sweep: gammas"));
    }
    (0..n_cases)
        .map(|i| {
            let mut s = stream.substream_named("audit-case").substream(i as u64);
            let gamma = gammas[i % gammas.len()];
            let mu_a = DVector::from_vec(s.unit_vector(d));
            let sigma_b_diag = DVector::from_fn(d, |_, _| s.uniform_in(0.5, 1.5));
            let params = HierarchicalGaussianParams {
                d,
                gamma,
                beta: 0.1,
                alpha: 0.5,
                mu_a,
                sigma_b_diag,
                n_identities_a: 1,
                n_identities_b: 1,
                m: 1,
                seed: s.to_seed(),
            };
            params.validate()?;
            let sigma_a = params.sigma_diag(Group::A);
            let x = DVector::from_fn(d, |j, _| {
                params.mu_a[j]
                    + sigma_a[j].sqrt() * s.standard_normal()
                    + params.beta.sqrt() * s.standard_normal()
            });
            Ok(AuditCase { config_id: i, params, x })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn inputs(a: f64, b: f64, gamma: f64, psi_mu_b: f64) -> BoundInputs {
        BoundInputs { a, b, gamma, psi_mu_b }
    }

    #[test]
    fn zero_a_collapses_the_interval_to_a_point() {
        let i = inputs(0.0, 1.0, 0.5, -2.0);
        let (lower, upper) = eta_interval(&i).unwrap().endpoints().unwrap();
        // With a = 0 the square-root term vanishes and both endpoints
        // reduce to psi_mu_b (1-gamma) / (b (gamma-1)) = -psi_mu_b / b.
        assert_abs_diff_eq!(lower, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(upper, 2.0, epsilon = 1e-15);
    }

    #[test]
    fn gamma_one_and_zero_b_are_singular() {
        assert!(matches!(
            eta_interval(&inputs(1.0, 1.0, 1.0, 0.5)),
            Err(CoreError::SingularConfiguration(_))
        ));
        assert!(matches!(
            eta_interval(&inputs(1.0, 0.0, 0.5, 0.5)),
            Err(CoreError::SingularConfiguration(_))
        ));
        assert!(matches!(
            epsilon_infeasibility_bound(&inputs(1.0, 1.0, 1.0, 0.5)),
            Err(CoreError::SingularConfiguration(_))
        ));
    }

    #[test]
    fn worked_interval_matches_the_independent_roots() {
        // At a = psi_mu_b the closed forms agree exactly with the solved
        // boundary: endpoints {-4, -4/3} for these values.
        let i = inputs(1.0, 1.0, 0.25, 1.0);
        let (lower, upper) = eta_interval(&i).unwrap().endpoints().unwrap();
        assert_abs_diff_eq!(lower, -4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(upper, -4.0 / 3.0, epsilon = 1e-12);
        let (rl, ru) = boundary_quadratic_roots(&i).unwrap().endpoints().unwrap();
        assert_abs_diff_eq!(lower, rl, epsilon = 1e-9);
        assert_abs_diff_eq!(upper, ru, epsilon = 1e-9);
        assert!(boundary_quadratic(&i, lower).abs() < 1e-9);
        assert!(boundary_quadratic(&i, upper).abs() < 1e-9);
    }

    #[test]
    fn independent_roots_always_satisfy_the_quadratic() {
        let mut s = Stream::root(29);
        for _ in 0..200 {
            let i = inputs(
                s.uniform_in(-3.0, 3.0),
                s.uniform_in(0.1, 2.0) * if s.uniform() < 0.5 { -1.0 } else { 1.0 },
                s.uniform_in(0.05, 0.95),
                s.uniform_in(-3.0, 3.0),
            );
            let (rl, ru) = boundary_quadratic_roots(&i).unwrap().endpoints().unwrap();
            // Residuals scale with the coefficients; normalize by them.
            let scale = 1.0 + i.a.abs().max(i.psi_mu_b.abs()).powi(2);
            assert!(boundary_quadratic(&i, rl).abs() / scale < 1e-9);
            assert!(boundary_quadratic(&i, ru).abs() / scale < 1e-9);
            assert!(rl <= ru);
        }
    }

    #[test]
    fn bound_hand_example_and_clamping() {
        // inner = (0 + 0 + 0 + (-2)(0.5)) / (1 * (-0.5)) = 2.
        let b = epsilon_infeasibility_bound(&inputs(0.0, 1.0, 0.5, -2.0)).unwrap();
        assert_abs_diff_eq!(b, 2.0, epsilon = 1e-15);
        // Flipping psi_mu_b makes the inner expression negative -> 0.
        let b = epsilon_infeasibility_bound(&inputs(0.0, 1.0, 0.5, 2.0)).unwrap();
        assert_eq!(b, 0.0);
    }

    #[test]
    fn bound_is_positive_part_of_the_matching_endpoint() {
        // The bound's inner expression is the 2b(gamma-1) endpoint form;
        // on the worked example that form evaluates to -4/3, so the bound
        // clamps to zero.
        let i = inputs(1.0, 1.0, 0.25, 1.0);
        assert_eq!(epsilon_infeasibility_bound(&i).unwrap(), 0.0);
        // On the a = 0 hand example the same form is +2 and survives.
        let i = inputs(0.0, 1.0, 0.5, -2.0);
        let (lower, _) = eta_interval(&i).unwrap().endpoints().unwrap();
        assert_abs_diff_eq!(
            epsilon_infeasibility_bound(&i).unwrap(),
            lower.max(0.0),
            epsilon = 1e-15
        );
    }

    #[test]
    fn bound_is_invariant_under_joint_negation() {
        let mut s = Stream::root(31);
        for _ in 0..200 {
            let i = inputs(
                s.uniform_in(-2.0, 2.0),
                s.uniform_in(0.2, 1.5) * if s.uniform() < 0.5 { -1.0 } else { 1.0 },
                s.uniform_in(0.05, 0.95),
                s.uniform_in(-2.0, 2.0),
            );
            let flipped = inputs(-i.a, -i.b, i.gamma, -i.psi_mu_b);
            assert_abs_diff_eq!(
                epsilon_infeasibility_bound(&i).unwrap(),
                epsilon_infeasibility_bound(&flipped).unwrap(),
                epsilon = 1e-12
            );
        }
    }

    /// Symmetric, equal-variance configuration for the oracle tests.
    fn symmetric_params(gamma: f64) -> HierarchicalGaussianParams {
        let d = 4;
        let mut mu = DVector::zeros(d);
        mu[0] = 1.0;
        HierarchicalGaussianParams {
            d,
            gamma,
            beta: 0.1,
            alpha: 0.5,
            mu_a: mu,
            sigma_b_diag: DVector::from_element(d, 0.5),
            n_identities_a: 1,
            n_identities_b: 1,
            m: 1,
            seed: 0,
        }
    }

    /// Mean-zero embedder aligned with the group axis.
    fn axis_embedder(d: usize) -> PcaEmbedder {
        let mut q = DMatrix::zeros(d, 1);
        q[(0, 0)] = 1.0;
        PcaEmbedder { mean: DVector::zeros(d), components: q, k: 1 }
    }

    #[test]
    fn equal_variance_crossing_sits_at_the_midpoint() {
        let params = symmetric_params(1.0);
        let emb = axis_embedder(4);
        let grid = GridSpec { max_eta: 3.0, resolution: 1e-3 };
        let crossing = likelihood_ratio_oracle(
            &params.mu(Group::A),
            &params,
            &emb,
            &grid,
            &OracleOptions::default(),
        )
        .unwrap()
        .expect("crossing must exist");
        // Equal variances put the boundary halfway between the means
        // (eta = 1 along the unit direction); strict comparison lands on
        // the first grid point past it.
        assert!((crossing - 1.0).abs() <= grid.resolution + 1e-12, "crossing {crossing}");
    }

    #[test]
    fn short_scan_returns_no_crossing() {
        let params = symmetric_params(1.0);
        let emb = axis_embedder(4);
        let grid = GridSpec { max_eta: 0.5, resolution: 1e-3 };
        let crossing = likelihood_ratio_oracle(
            &params.mu(Group::A),
            &params,
            &emb,
            &grid,
            &OracleOptions::default(),
        )
        .unwrap();
        assert_eq!(crossing, None);
    }

    #[test]
    fn oracle_rejects_degenerate_direction() {
        let params = symmetric_params(0.5);
        let emb = axis_embedder(4);
        let r = likelihood_ratio_oracle(
            &params.mu(Group::B),
            &params,
            &emb,
            &GridSpec::default(),
            &OracleOptions::default(),
        );
        assert!(matches!(r, Err(CoreError::SingularConfiguration(_))));
    }

    #[test]
    fn smaller_gamma_moves_the_crossing_toward_group_a() {
        // Shrinking group a's variance pulls the decision boundary toward
        // mu_a, so the crossing along the a->b direction comes earlier.
        let emb = axis_embedder(4);
        let grid = GridSpec { max_eta: 3.0, resolution: 1e-4 };
        let crossing_at = |gamma: f64| {
            let params = symmetric_params(gamma);
            likelihood_ratio_oracle(
                &params.mu(Group::A),
                &params,
                &emb,
                &grid,
                &OracleOptions::default(),
            )
            .unwrap()
            .expect("crossing must exist")
        };
        assert!(crossing_at(0.2) < crossing_at(0.6));
        assert!(crossing_at(0.6) < crossing_at(1.0));
    }

    #[test]
    fn population_covariance_matches_hand_computation() {
        let params = symmetric_params(0.5);
        let cov = population_covariance(&params);
        // Mixture mean is 0; diagonal = 0.5*(gamma*0.5 + 0.1) +
        // 0.5*(0.5 + 0.1) plus 1.0 on the group axis from the means.
        let within = 0.5 * (0.5 * 0.5 + 0.1) + 0.5 * (0.5 + 0.1);
        assert_abs_diff_eq!(cov[(0, 0)], within + 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cov[(1, 1)], within, epsilon = 1e-12);
        assert_abs_diff_eq!(cov[(0, 1)], 0.0, epsilon = 1e-15);
        // The leading component therefore aligns with the group axis.
        let emb = leading_component_embedder(&params).unwrap();
        assert_abs_diff_eq!(emb.components[(0, 0)].abs(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn empty_sweep_audits_to_an_empty_report() {
        let report =
            audit_bound(&[], &GridSpec::default(), &OracleOptions::default()).unwrap();
        assert!(report.rows.is_empty());
        assert_eq!(report.summary.n_cases, 0);
        assert_eq!(report.summary.n_violations, 0);
        assert_eq!(report.to_csv(), format!("{AUDIT_CSV_HEADER}\n"));
    }

    #[test]
    fn audit_rows_are_internally_consistent() {
        let cases = seeded_sweep(12, &[0.1, 0.3, 0.5, 0.7, 0.9], 6, &Stream::root(41)).unwrap();
        let grid = GridSpec { max_eta: 20.0, resolution: 1e-3 };
        let report = audit_bound(&cases, &grid, &OracleOptions::default()).unwrap();
        assert_eq!(report.rows.len(), 12);
        for (i, row) in report.rows.iter().enumerate() {
            assert_eq!(row.config_id, i, "rows keep input order");
            assert!(row.bound >= 0.0);
            match row.oracle_crossing {
                Some(c) => {
                    assert_abs_diff_eq!(row.slack.unwrap(), c - row.bound, epsilon = 1e-15);
                    assert_eq!(row.violation, c < row.bound - grid.resolution);
                }
                None => {
                    assert!(row.slack.is_none());
                    assert!(!row.violation);
                }
            }
            assert!(row.eta_lower <= row.eta_upper);
            assert!(row.root_lower <= row.root_upper);
        }
        assert_eq!(
            report.summary.n_violations,
            report.rows.iter().filter(|r| r.violation).count()
        );
    }

    #[test]
    fn audit_is_deterministic_and_parallel_safe() {
        let cases = seeded_sweep(8, &[0.3, 0.6], 5, &Stream::root(43)).unwrap();
        let grid = GridSpec { max_eta: 15.0, resolution: 1e-3 };
        let a = audit_bound(&cases, &grid, &OracleOptions::default()).unwrap();
        let b = audit_bound(&cases, &grid, &OracleOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn audit_csv_has_the_documented_schema() {
        let cases = seeded_sweep(3, &[0.4], 4, &Stream::root(47)).unwrap();
        let report =
            audit_bound(&cases, &GridSpec::default(), &OracleOptions::default()).unwrap();
        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "config_id,gamma,a,b,psi_mu_b,bound,oracle_crossing,slack,violation"
        );
        for line in lines {
            assert_eq!(line.split(',').count(), 9);
        }
    }

    #[test]
    fn endpoint_gap_vanishes_exactly_when_a_equals_psi_mu_b() {
        // The closed forms and the solved roots coincide on the diagonal
        // a = psi_mu_b and generally diverge off it; both facts are
        // measured here rather than assumed.
        let on = inputs(1.3, 0.8, 0.4, 1.3);
        let (l, u) = eta_interval(&on).unwrap().endpoints().unwrap();
        let (rl, ru) = boundary_quadratic_roots(&on).unwrap().endpoints().unwrap();
        assert_abs_diff_eq!(l, rl, epsilon = 1e-12);
        assert_abs_diff_eq!(u, ru, epsilon = 1e-12);

        let off = inputs(0.5, 0.8, 0.4, 1.7);
        let (l, u) = eta_interval(&off).unwrap().endpoints().unwrap();
        let (rl, ru) = boundary_quadratic_roots(&off).unwrap().endpoints().unwrap();
        let gap = (l - rl).abs().max((u - ru).abs());
        assert!(gap > 1e-3, "expected a measurable endpoint gap, got {gap}");
        assert!(boundary_quadratic(&off, rl).abs() < 1e-9);
    }
}
