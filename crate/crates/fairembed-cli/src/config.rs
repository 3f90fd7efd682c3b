//! Scenario configuration: strict TOML (unknown keys are errors), defaults
//! for every field, validation with field paths, and a canonical digest.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use fairembed_core::attacks::{AttackConfig, HingeVariant};
use fairembed_core::bounds::{GridSpec, OracleOptions};
use fairembed_core::synthetic::HierarchicalGaussianParams;

use crate::error::AppError;

/// The named experiment to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    ProjectionDistance,
    BoundAudit,
    AttackSweep,
    MatchingReport,
    StatsReport,
    #[default]
    FullPipeline,
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::ProjectionDistance => "projection_distance",
            Scenario::BoundAudit => "bound_audit",
            Scenario::AttackSweep => "attack_sweep",
            Scenario::MatchingReport => "matching_report",
            Scenario::StatsReport => "stats_report",
            Scenario::FullPipeline => "full_pipeline",
        }
    }
}

/// Run-wide settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Master seed; every stage derives its own stream from it.
    pub seed: u64,
    /// Output directory for CSV artifacts and the manifest.
    pub out_dir: String,
    /// Worker threads; 0 means the library default.
    pub threads: usize,
    /// Also serialize the sampled base dataset (large file).
    pub emit_dataset: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 20_260_825,
            out_dir: "fairembed-out".into(),
            threads: 0,
            emit_dataset: false,
        }
    }
}

/// Two-group hierarchical Gaussian model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub d: usize,
    pub gamma: f64,
    pub beta: f64,
    pub alpha: f64,
    pub n_identities_a: usize,
    pub n_identities_b: usize,
    /// Images per identity.
    pub m: usize,
    /// Scalar fill for the group-b covariance diagonal; ignored when
    /// `sigma_b_diag` is set.
    pub sigma_b: f64,
    /// Explicit group-b covariance diagonal (length d).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_b_diag: Option<Vec<f64>>,
    /// Explicit group-a mean (unit norm, length d); defaults to the first
    /// coordinate axis.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu_a: Option<Vec<f64>>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            d: 20,
            gamma: 0.01,
            beta: 0.1,
            alpha: 0.5,
            n_identities_a: 500,
            n_identities_b: 500,
            m: 10,
            sigma_b: 1.0,
            sigma_b_diag: None,
            mu_a: None,
        }
    }
}

impl ModelSection {
    /// Materializes the model parameters (validated).
    pub fn to_params(&self, seed: u64) -> Result<HierarchicalGaussianParams, AppError> {
        let mu_a = match &self.mu_a {
            Some(v) => DVector::from_vec(v.clone()),
            None => {
                let mut e1 = DVector::zeros(self.d);
                if self.d > 0 {
                    e1[0] = 1.0;
                }
                e1
            }
        };
        let sigma_b_diag = match &self.sigma_b_diag {
            Some(v) => DVector::from_vec(v.clone()),
            None => DVector::from_element(self.d, self.sigma_b),
        };
        let params = HierarchicalGaussianParams {
            d: self.d,
            gamma: self.gamma,
            beta: self.beta,
            alpha: self.alpha,
            mu_a,
            sigma_b_diag,
            n_identities_a: self.n_identities_a,
            n_identities_b: self.n_identities_b,
            m: self.m,
            seed,
        };
        params
            .validate()
            .map_err(|e| AppError::Config(format!("model: {e}")))?;
        Ok(params)
    }
}

/// Embedding-map choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    #[default]
    Pca,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedderSection {
    pub kind: EmbedderKind,
    /// Embedding dimension (PCA components / final layer width).
    pub k: usize,
    /// Hidden layer widths for the MLP (input d and output k are implied).
    pub hidden_dims: Vec<usize>,
    pub margin: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub step_size: f64,
}

impl Default for EmbedderSection {
    fn default() -> Self {
        EmbedderSection {
            kind: EmbedderKind::Pca,
            k: 3,
            hidden_dims: vec![16],
            margin: 0.5,
            epochs: 4,
            batch_size: 64,
            step_size: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectionSection {
    /// Gamma values swept by projection_distance and stats_report.
    pub gamma_sweep: Vec<f64>,
}

impl Default for ProjectionSection {
    fn default() -> Self {
        ProjectionSection { gamma_sweep: vec![1.0, 0.01] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchingSection {
    /// FAR bounds to report thresholds at.
    pub z_values: Vec<f64>,
    /// Cap on genuine and impostor pair counts (each).
    pub pair_cap: usize,
}

impl Default for MatchingSection {
    fn default() -> Self {
        MatchingSection { z_values: vec![0.001, 0.05], pair_cap: 20_000 }
    }
}

/// Mirror of the core hinge switch with a stable config spelling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HingeVariantConfig {
    #[default]
    MaxAsWritten,
    MinVariant,
}

impl From<HingeVariantConfig> for HingeVariant {
    fn from(v: HingeVariantConfig) -> Self {
        match v {
            HingeVariantConfig::MaxAsWritten => HingeVariant::MaxAsWritten,
            HingeVariantConfig::MinVariant => HingeVariant::MinVariant,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    /// Budget for targeted attacks.
    pub epsilon: f64,
    /// Budgets swept by untargeted attacks.
    pub epsilon_sweep: Vec<f64>,
    /// Hinge margins swept by targeted attacks.
    pub kappa_sweep: Vec<f64>,
    pub step_size: f64,
    pub max_iters: usize,
    pub penalty_init: f64,
    pub penalty_bsearch_steps: usize,
    pub hinge_variant: HingeVariantConfig,
    /// Source images drawn per pairing scenario.
    pub n_sources: usize,
    pub n_targets_per_source: usize,
    /// Centroid-map size handed to the targeted attack (source and target
    /// are always included on top).
    pub competitor_pool: usize,
    /// FAR bound whose threshold judges attack success.
    pub success_z: f64,
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            epsilon: 5.0,
            epsilon_sweep: vec![0.1, 0.5, 1.0, 2.0, 5.0],
            kappa_sweep: vec![0.0, 5.0, 10.0],
            step_size: 0.05,
            max_iters: 400,
            penalty_init: 0.5,
            penalty_bsearch_steps: 6,
            hinge_variant: HingeVariantConfig::MaxAsWritten,
            n_sources: 30,
            n_targets_per_source: 2,
            competitor_pool: 128,
            success_z: 0.05,
        }
    }
}

impl AttackSection {
    /// Core attack configuration at a given budget and margin.
    pub fn to_attack_config(&self, epsilon: f64, kappa: f64, seed: u64) -> AttackConfig {
        AttackConfig {
            epsilon,
            step_size: self.step_size,
            max_iters: self.max_iters,
            kappa,
            penalty_init: self.penalty_init,
            penalty_bsearch_steps: self.penalty_bsearch_steps,
            hinge_variant: self.hinge_variant.into(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundAuditSection {
    pub n_cases: usize,
    /// Cycled through the seeded sweep.
    pub gammas: Vec<f64>,
    pub max_eta: f64,
    pub resolution: f64,
    pub include_beta: bool,
    pub include_prior: bool,
}

impl Default for BoundAuditSection {
    fn default() -> Self {
        BoundAuditSection {
            n_cases: 100,
            gammas: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
            max_eta: 20.0,
            resolution: 1e-3,
            include_beta: false,
            include_prior: false,
        }
    }
}

impl BoundAuditSection {
    pub fn grid(&self) -> GridSpec {
        GridSpec { max_eta: self.max_eta, resolution: self.resolution }
    }

    pub fn oracle_options(&self) -> OracleOptions {
        OracleOptions {
            include_beta: self.include_beta,
            include_prior: self.include_prior,
        }
    }
}

/// Complete run configuration. Every field has a default; unknown keys in
/// any section are rejected at parse time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// Scenario to run when the command line names none.
    pub scenario: Scenario,
    pub run: RunSection,
    pub model: ModelSection,
    pub embedder: EmbedderSection,
    pub projection: ProjectionSection,
    pub matching: MatchingSection,
    pub attack: AttackSection,
    pub bound_audit: BoundAuditSection,
}

impl ScenarioConfig {
    /// Validates every invariant the scenarios rely on, naming the
    /// offending field.
    pub fn validate(&self) -> Result<(), AppError> {
        let err = |msg: String| Err(AppError::Config(msg));

        self.model.to_params(self.run.seed)?;

        if self.embedder.k == 0 {
            return err("embedder.k: must be positive".into());
        }
        if self.embedder.k > self.model.d {
            return err(format!(
                "embedder.k: {} exceeds model.d = {}",
                self.embedder.k, self.model.d
            ));
        }
        if self.embedder.kind == EmbedderKind::Mlp {
            if self.embedder.batch_size == 0 {
                return err("embedder.batch_size: must be positive".into());
            }
            if !(self.embedder.step_size > 0.0) {
                return err("embedder.step_size: must be positive".into());
            }
            if !(self.embedder.margin >= 0.0) {
                return err("embedder.margin: must be nonnegative".into());
            }
        }

        if self.projection.gamma_sweep.is_empty() {
            return err("projection.gamma_sweep: must be nonempty".into());
        }
        for (i, g) in self.projection.gamma_sweep.iter().enumerate() {
            if !(*g > 0.0) {
                return err(format!("projection.gamma_sweep[{i}]: must be positive, got {g}"));
            }
        }

        if self.matching.z_values.is_empty() {
            return err("matching.z_values: must be nonempty".into());
        }
        for (i, z) in self.matching.z_values.iter().enumerate() {
            if !(*z > 0.0 && *z <= 1.0) {
                return err(format!("matching.z_values[{i}]: must lie in (0, 1], got {z}"));
            }
        }
        if self.matching.pair_cap == 0 {
            return err("matching.pair_cap: must be positive".into());
        }

        if self.attack.epsilon_sweep.is_empty() {
            return err("attack.epsilon_sweep: must be nonempty".into());
        }
        if self.attack.kappa_sweep.is_empty() {
            return err("attack.kappa_sweep: must be nonempty".into());
        }
        self.attack
            .to_attack_config(self.attack.epsilon, 0.0, self.run.seed)
            .validate()
            .map_err(|e| AppError::Config(format!("attack: {e}")))?;
        for (i, eps) in self.attack.epsilon_sweep.iter().enumerate() {
            if !(*eps >= 0.0) {
                return err(format!(
                    "attack.epsilon_sweep[{i}]: must be nonnegative, got {eps}"
                ));
            }
        }
        for (i, kappa) in self.attack.kappa_sweep.iter().enumerate() {
            if !(*kappa >= 0.0) {
                return err(format!(
                    "attack.kappa_sweep[{i}]: must be nonnegative, got {kappa}"
                ));
            }
        }
        if self.attack.n_sources == 0 || self.attack.n_targets_per_source == 0 {
            return err(
                "attack.n_sources / attack.n_targets_per_source: must be positive".into(),
            );
        }
        if self.attack.competitor_pool < 2 {
            return err("attack.competitor_pool: at least 2 centroids required".into());
        }
        if !(self.attack.success_z > 0.0 && self.attack.success_z <= 1.0) {
            return err(format!(
                "attack.success_z: must lie in (0, 1], got {}",
                self.attack.success_z
            ));
        }

        if self.bound_audit.gammas.is_empty() {
            return err("bound_audit.gammas: must be nonempty".into());
        }
        for (i, g) in self.bound_audit.gammas.iter().enumerate() {
            if !(*g > 0.0 && *g < 1.0) {
                return err(format!(
                    "bound_audit.gammas[{i}]: must lie strictly in (0, 1), got {g}"
                ));
            }
        }
        self.bound_audit
            .grid()
            .validate()
            .map_err(|e| AppError::Config(format!("bound_audit: {e}")))?;

        Ok(())
    }

    /// Canonical TOML rendering (struct field order, independent of the
    /// key order in the source file).
    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("config serialization cannot fail")
    }

    /// Hex SHA-256 of the canonical rendering. Stable under reordering of
    /// keys in the input file.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical_toml().as_bytes());
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Parses and validates a TOML config file. Unknown keys, malformed
/// values, and invariant violations are all reported with enough context
/// to locate the offending field.
pub fn parse_config(path: &Path) -> Result<ScenarioConfig, AppError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| AppError::Io(format!("reading {}: {e}", path.display())))?;
    parse_config_str(&text)
}

/// Parses and validates config text.
pub fn parse_config_str(text: &str) -> Result<ScenarioConfig, AppError> {
    let config: ScenarioConfig =
        toml::from_str(text).map_err(|e| AppError::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

/// The default config as TOML, suitable for `--print-default-config`.
pub fn default_config_toml() -> String {
    ScenarioConfig::default().canonical_toml()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let printed = default_config_toml();
        let parsed = parse_config_str(&printed).unwrap();
        assert_eq!(parsed, ScenarioConfig::default());
        assert_eq!(parsed.digest(), ScenarioConfig::default().digest());
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = parse_config_str("[model]\nbanana = 3\n").unwrap_err();
        match err {
            AppError::Config(msg) => assert!(msg.contains("banana"), "message: {msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_gamma_names_the_field() {
        let err = parse_config_str("[model]\ngamma = -1.0\n").unwrap_err();
        match err {
            AppError::Config(msg) => {
                assert!(msg.contains("gamma"), "message: {msg}");
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn digest_ignores_key_order() {
        let a = parse_config_str("[model]\nd = 6\ngamma = 0.5\n").unwrap();
        let b = parse_config_str("[model]\ngamma = 0.5\nd = 6\n").unwrap();
        assert_eq!(a.digest(), b.digest());
        // And differs when content differs.
        let c = parse_config_str("[model]\ngamma = 0.25\nd = 6\n").unwrap();
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn scenario_names_match_serde_spelling() {
        for (scenario, name) in [
            (Scenario::ProjectionDistance, "projection_distance"),
            (Scenario::BoundAudit, "bound_audit"),
            (Scenario::AttackSweep, "attack_sweep"),
            (Scenario::MatchingReport, "matching_report"),
            (Scenario::StatsReport, "stats_report"),
            (Scenario::FullPipeline, "full_pipeline"),
        ] {
            assert_eq!(scenario.name(), name);
            let parsed = parse_config_str(&format!("scenario = \"{name}\"\n")).unwrap();
            assert_eq!(parsed.scenario, scenario);
        }
    }

    #[test]
    fn model_section_materializes_params() {
        let params = ModelSection::default().to_params(7).unwrap();
        assert_eq!(params.d, 20);
        assert_eq!(params.n_identities_a, 500);
        assert_eq!(params.sigma_b_diag.len(), 20);
        assert_eq!(params.mu_a[0], 1.0);
        assert_eq!(params.seed, 7);
    }
}
