//! Untargeted PGD and targeted hinge-penalty attacks against any
//! differentiable embedder, with per-group success reporting.
//!
//! Both perturbation budgets and embedding distances are plain l2. The
//! targeted attack minimizes `‖δ‖² + c·G_κ` with an outer search over the
//! penalty weight `c` (doubling until the constraint is met, then
//! bisection); feasibility of a candidate is always re-checked by freshly
//! embedding `x + δ`, never trusted from optimizer state.

use std::collections::BTreeMap;

use nalgebra::DVector;

use crate::embed::Embedder;
use crate::error::{CoreError, Result};
use crate::stream::Stream;
use crate::synthetic::{global_identity, Group, SyntheticDataset};

/// Tolerance slack on the `‖δ‖ ≤ ε` budget re-check.
const BUDGET_TOL: f64 = 1e-9;

/// Hard cap on penalty doublings before giving up on feasibility.
const MAX_PENALTY_DOUBLINGS: usize = 20;

/// Which non-target distance the hinge compares against.
///
/// The hinge is `max{0, κ + ρ2(e, c_target) − agg_{y'≠target} ρ2(e, c_y')}`.
/// With `agg = max` (the literal form) the competitor is the *farthest*
/// non-target centroid, which makes the constraint easier the more remote
/// centroids exist; with `agg = min` it is the nearest competitor, the
/// conventional impersonation reading. Both are available so the gap
/// between the readings is measurable; the default is the literal form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HingeVariant {
    #[default]
    MaxAsWritten,
    MinVariant,
}

impl std::fmt::Display for HingeVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            HingeVariant::MaxAsWritten => "max_as_written",
            HingeVariant::MinVariant => "min_variant",
        })
    }
}

/// Attack hyperparameters shared by both attack families.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    /// l2 perturbation budget (the feasible ball radius). Nonnegative.
    pub epsilon: f64,
    /// Gradient step size. Positive.
    pub step_size: f64,
    /// Iteration budget per optimization run. Positive.
    pub max_iters: usize,
    /// Hinge margin κ. Nonnegative.
    pub kappa: f64,
    /// Initial penalty weight for the targeted attack. Positive.
    pub penalty_init: f64,
    /// Bisection refinements of the penalty after the first success.
    pub penalty_bsearch_steps: usize,
    /// Hinge competitor rule.
    pub hinge_variant: HingeVariant,
    /// Seed consumed by pair sampling (the attacks themselves are
    /// deterministic once the pairs are fixed).
    pub seed: u64,
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) {
            return Err(CoreError::InvalidParameter {
                name: "epsilon",
                reason: format!("must be nonnegative, got {}", self.epsilon),
            });
        }
        if !(self.step_size > 0.0) {
            return Err(CoreError::InvalidParameter {
                name: "step_size",
                reason: format!("must be positive, got {}", self.step_size),
            });
        }
        if self.max_iters == 0 {
            return Err(CoreError::InvalidParameter {
                name: "max_iters",
                reason: "must be positive".into(),
            });
        }
        if !(self.kappa >= 0.0) {
            return Err(CoreError::InvalidParameter {
                name: "kappa",
                reason: format!("must be nonnegative, got {}", self.kappa),
            });
        }
        if !(self.penalty_init > 0.0) {
            return Err(CoreError::InvalidParameter {
                name: "penalty_init",
                reason: format!("must be positive, got {}", self.penalty_init),
            });
        }
        Ok(())
    }
}

/// Outcome of one attack instance.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationResult {
    /// The returned perturbation.
    pub delta: DVector<f64>,
    /// `‖delta‖₂`.
    pub norm: f64,
    /// For targeted attacks: the constraint was met within budget. For
    /// untargeted attacks this is filled in later against a match
    /// threshold (see [`judge_untargeted_success`]).
    pub success: bool,
    /// Embedding distance of the perturbed point to the source centroid.
    pub dist_to_source_centroid: f64,
    /// Embedding distance to the target centroid (targeted attacks only).
    pub dist_to_target_centroid: Option<f64>,
    /// Gradient iterations actually spent (summed over penalty attempts
    /// for the targeted attack).
    pub iterations_used: usize,
    pub source_group: Group,
    /// Global identity label of the source.
    pub source_identity: usize,
    /// Global identity label of the target (targeted attacks only).
    pub target_identity: Option<usize>,
}

/// l2 distance between two embedded points.
fn rho2(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm()
}

/// Pre-hinge margin `φ = κ + ρ2(e, target) − agg_{y'≠target} ρ2(e, c_y')`
/// plus the competitor centroid realizing the aggregate. Feasibility of a
/// targeted attack means `φ ≤ 0`.
fn hinge_margin<'a>(
    e: &DVector<f64>,
    target_centroid: &DVector<f64>,
    other_centroids: &'a [DVector<f64>],
    kappa: f64,
    variant: HingeVariant,
) -> (f64, &'a DVector<f64>) {
    assert!(!other_centroids.is_empty(), "hinge needs at least one competitor");
    let mut pick = &other_centroids[0];
    let mut agg = rho2(e, pick);
    for c in &other_centroids[1..] {
        let d = rho2(e, c);
        let better = match variant {
            HingeVariant::MaxAsWritten => d > agg,
            HingeVariant::MinVariant => d < agg,
        };
        if better {
            agg = d;
            pick = c;
        }
    }
    (kappa + rho2(e, target_centroid) - agg, pick)
}

/// Multi-class hinge loss
/// `G = max{0, κ + ρ2(e, c_target) − agg_{y'≠target} ρ2(e, c_y')}`.
pub fn hinge_loss_g(
    e: &DVector<f64>,
    target_centroid: &DVector<f64>,
    other_centroids: &[DVector<f64>],
    kappa: f64,
    variant: HingeVariant,
) -> f64 {
    hinge_margin(e, target_centroid, other_centroids, kappa, variant).0.max(0.0)
}

/// Untargeted evasion: maximize the embedding distance to the source
/// centroid over the ε-ball.
///
/// Normalized-gradient ascent with projection onto the ball after every
/// step; the best iterate (largest distance seen, including the start) is
/// returned. `success` is left `false` — it is only meaningful relative
/// to a match threshold, which the caller applies afterwards.
pub fn untargeted_pgd(
    embedder: &dyn Embedder,
    x: &DVector<f64>,
    source_centroid: &DVector<f64>,
    source_group: Group,
    source_identity: usize,
    config: &AttackConfig,
) -> Result<PerturbationResult> {
    config.validate()?;
    let eps = config.epsilon;
    let mut delta = DVector::zeros(x.len());
    let mut best_delta = delta.clone();
    let mut best_dist = rho2(&embedder.embed(x), source_centroid);
    let mut iterations = 0usize;

    for _ in 0..config.max_iters {
        if eps == 0.0 {
            break;
        }
        iterations += 1;
        let point = x + &delta;
        let e = embedder.embed(&point);
        let residual = &e - source_centroid;
        let dist = residual.norm();
        // At exactly zero distance the objective is not differentiable;
        // any unit upstream direction is an ascent direction.
        let upstream = if dist > 1e-12 {
            residual / dist
        } else {
            let mut u = DVector::zeros(e.len());
            u[0] = 1.0;
            u
        };
        let grad = embedder.input_gradient(&point, &upstream);
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NumericFailure(format!(
                "untargeted ascent hit a non-finite gradient at iteration {iterations}"
            )));
        }
        let grad_norm = grad.norm();
        if grad_norm < 1e-15 {
            break;
        }
        delta += grad * (config.step_size / grad_norm);
        let delta_norm = delta.norm();
        if delta_norm > eps {
            delta *= eps / delta_norm;
        }
        debug_assert!(delta.norm() <= eps + BUDGET_TOL, "iterate left the budget ball");
        let new_dist = rho2(&embedder.embed(&(x + &delta)), source_centroid);
        if new_dist > best_dist {
            best_dist = new_dist;
            best_delta = delta.clone();
        }
    }

    let norm = best_delta.norm();
    debug_assert!(norm <= eps + BUDGET_TOL);
    Ok(PerturbationResult {
        delta: best_delta,
        norm,
        success: false,
        dist_to_source_centroid: best_dist,
        dist_to_target_centroid: None,
        iterations_used: iterations,
        source_group,
        source_identity,
        target_identity: None,
    })
}

/// Marks untargeted results as successful when the perturbed embedding
/// sits at or beyond the match threshold from its own centroid (the
/// perturbed image would no longer match its identity at that threshold).
pub fn judge_untargeted_success(results: &mut [PerturbationResult], tau: f64) {
    for r in results {
        r.success = r.dist_to_source_centroid >= tau;
    }
}

/// One gradient-descent run of the penalized targeted objective at a fixed
/// penalty weight. Returns the best feasible `(norm, delta)` seen, the
/// smallest constraint value seen (for diagnostics), and iterations spent.
struct PenaltyRun {
    best_feasible: Option<(f64, DVector<f64>)>,
    iterations: usize,
}

fn penalty_descent(
    embedder: &dyn Embedder,
    x: &DVector<f64>,
    target_centroid: &DVector<f64>,
    others: &[DVector<f64>],
    penalty: f64,
    config: &AttackConfig,
) -> Result<PenaltyRun> {
    let eps = config.epsilon;
    let mut delta = DVector::zeros(x.len());
    let mut best_feasible: Option<(f64, DVector<f64>)> = None;
    let mut iterations = 0usize;
    for _ in 0..config.max_iters {
        iterations += 1;
        let point = x + &delta;
        let e = embedder.embed(&point);
        let (phi, competitor) =
            hinge_margin(&e, target_centroid, others, config.kappa, config.hinge_variant);
        if !phi.is_finite() {
            return Err(CoreError::NumericFailure(
                "targeted attack objective became non-finite".into(),
            ));
        }
        if phi <= 0.0 {
            let norm = delta.norm();
            if best_feasible.as_ref().map_or(true, |(bn, _)| norm < *bn) {
                best_feasible = Some((norm, delta.clone()));
            }
        }
        // Gradient of ‖δ‖² + penalty * G. The hinge contributes only on
        // its active side (φ > 0); at the kink the inactive subgradient 0
        // applies.
        let mut grad = &delta * 2.0;
        if phi > 0.0 {
            let d_t = rho2(&e, target_centroid).max(1e-12);
            let d_o = rho2(&e, competitor).max(1e-12);
            let upstream = (&e - target_centroid) / d_t - (&e - competitor) / d_o;
            grad += embedder.input_gradient(&point, &upstream) * penalty;
        }
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NumericFailure(format!(
                "targeted descent hit a non-finite gradient at iteration {iterations}"
            )));
        }
        delta -= grad * config.step_size;
        let delta_norm = delta.norm();
        if delta_norm > eps {
            if eps == 0.0 {
                delta.fill(0.0);
            } else {
                delta *= eps / delta_norm;
            }
        }
    }
    Ok(PenaltyRun { best_feasible, iterations })
}

/// Targeted impersonation: find the smallest perturbation whose embedding
/// satisfies the hinge constraint against the target identity.
///
/// `centroids` maps global identity labels to embedding centroids; the
/// source and target identities must both be present, and at least one
/// centroid besides the target is required (the hinge needs a competitor).
/// A feasibility check at `δ = 0` short-circuits the search. Otherwise the
/// penalty weight doubles from `penalty_init` until a feasible point
/// appears (at most 20 doublings), then bisects for
/// `penalty_bsearch_steps` rounds; the smallest-norm feasible perturbation
/// across all runs wins. When nothing feasible is found the result records
/// `success = false` with `δ = 0`.
pub fn targeted_cw(
    embedder: &dyn Embedder,
    x: &DVector<f64>,
    source_group: Group,
    source_identity: usize,
    target_identity: usize,
    centroids: &BTreeMap<usize, DVector<f64>>,
    config: &AttackConfig,
) -> Result<PerturbationResult> {
    config.validate()?;
    let target_centroid = centroids
        .get(&target_identity)
        .ok_or(CoreError::UnknownIdentity(target_identity))?;
    let source_centroid = centroids
        .get(&source_identity)
        .ok_or(CoreError::UnknownIdentity(source_identity))?;
    let others: Vec<DVector<f64>> = centroids
        .iter()
        .filter(|(&id, _)| id != target_identity)
        .map(|(_, c)| c.clone())
        .collect();
    if others.is_empty() {
        return Err(CoreError::SingularConfiguration(
            "targeted attack needs at least one non-target centroid".into(),
        ));
    }

    let finish = |delta: DVector<f64>, success: bool, iterations: usize| {
        let e = embedder.embed(&(x + &delta));
        let norm = delta.norm();
        PerturbationResult {
            norm,
            success,
            dist_to_source_centroid: rho2(&e, source_centroid),
            dist_to_target_centroid: Some(rho2(&e, target_centroid)),
            iterations_used: iterations,
            source_group,
            source_identity,
            target_identity: Some(target_identity),
            delta,
        }
    };

    // Feasible already at δ = 0?
    let e0 = embedder.embed(x);
    let (phi0, _) =
        hinge_margin(&e0, target_centroid, &others, config.kappa, config.hinge_variant);
    if phi0 <= 0.0 {
        return Ok(finish(DVector::zeros(x.len()), true, 0));
    }
    if config.epsilon == 0.0 {
        return Ok(finish(DVector::zeros(x.len()), false, 0));
    }

    let mut total_iterations = 0usize;
    let mut best: Option<(f64, DVector<f64>)> = None;
    let keep_best = |run: &PenaltyRun, best: &mut Option<(f64, DVector<f64>)>| {
        if let Some((norm, delta)) = &run.best_feasible {
            if best.as_ref().map_or(true, |(bn, _)| norm < bn) {
                *best = Some((*norm, delta.clone()));
            }
        }
    };

    // Phase 1: double the penalty until the constraint is met.
    let mut penalty = config.penalty_init;
    let mut feasible_penalty = None;
    let mut last_infeasible = 0.0f64;
    for _ in 0..=MAX_PENALTY_DOUBLINGS {
        let run = penalty_descent(embedder, x, target_centroid, &others, penalty, config)?;
        total_iterations += run.iterations;
        if run.best_feasible.is_some() {
            keep_best(&run, &mut best);
            feasible_penalty = Some(penalty);
            break;
        }
        last_infeasible = penalty;
        penalty *= 2.0;
    }

    // Phase 2: bisect between the last failing and first succeeding
    // penalty, keeping whatever smallest-norm feasible point appears.
    if let Some(hi) = feasible_penalty {
        let mut lo = last_infeasible;
        let mut hi = hi;
        for _ in 0..config.penalty_bsearch_steps {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let run = penalty_descent(embedder, x, target_centroid, &others, mid, config)?;
            total_iterations += run.iterations;
            if run.best_feasible.is_some() {
                keep_best(&run, &mut best);
                hi = mid;
            } else {
                lo = mid;
            }
        }
    }

    match best {
        Some((norm, delta)) => {
            // Re-verify from scratch before declaring success: budget and
            // constraint both must hold on a fresh embedding.
            let e = embedder.embed(&(x + &delta));
            let g = hinge_loss_g(&e, target_centroid, &others, config.kappa, config.hinge_variant);
            let ok = norm <= config.epsilon + BUDGET_TOL && g <= 1e-6;
            Ok(finish(if ok { delta } else { DVector::zeros(x.len()) }, ok, total_iterations))
        }
        None => Ok(finish(DVector::zeros(x.len()), false, total_iterations)),
    }
}

/// One row of a success-rate table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuccessCurveRow {
    pub group: Group,
    pub tau: f64,
    pub success_rate: f64,
}

/// Success mode for [`success_curve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuccessMode {
    /// Success at τ: the perturbed point matches the target identity
    /// (`dist_to_target_centroid < τ`).
    Targeted,
    /// Success at τ: the perturbed point evades its own identity
    /// (`dist_to_source_centroid ≥ τ`).
    Untargeted,
}

/// Success rates per source group over a threshold sweep.
pub fn success_curve(
    results: &[PerturbationResult],
    taus: &[f64],
    mode: SuccessMode,
) -> Result<Vec<SuccessCurveRow>> {
    if results.is_empty() {
        return Err(CoreError::EmptyInput("success_curve: results"));
    }
    if mode == SuccessMode::Targeted
        && results.iter().any(|r| r.dist_to_target_centroid.is_none())
    {
        return Err(CoreError::InvalidParameter {
            name: "results",
            reason: "targeted success curve requires target distances on every result".into(),
        });
    }
    let mut rows = Vec::new();
    for group in Group::both() {
        let members: Vec<&PerturbationResult> =
            results.iter().filter(|r| r.source_group == group).collect();
        if members.is_empty() {
            continue;
        }
        for &tau in taus {
            let hits = members
                .iter()
                .filter(|r| match mode {
                    SuccessMode::Targeted => r.dist_to_target_centroid.unwrap() < tau,
                    SuccessMode::Untargeted => r.dist_to_source_centroid >= tau,
                })
                .count();
            rows.push(SuccessCurveRow {
                group,
                tau,
                success_rate: hits as f64 / members.len() as f64,
            });
        }
    }
    Ok(rows)
}

/// Source/target pairing scenario for targeted attacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairScenario {
    /// Target identities drawn from the source's own group.
    SameGroup,
    /// Target identities drawn from the other group.
    DifferentGroup,
}

impl std::fmt::Display for PairScenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PairScenario::SameGroup => "same_group",
            PairScenario::DifferentGroup => "different_group",
        })
    }
}

/// One attack assignment: which image to perturb toward which identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttackPair {
    /// Index into `dataset.images`.
    pub image_index: usize,
    pub source_group: Group,
    /// Global identity label of the source image.
    pub source_identity: usize,
    /// Global identity label of the target.
    pub target_identity: usize,
}

/// Samples `n_sources` source images (without replacement, over the whole
/// dataset) and `n_targets_per_source` target identities for each, drawn
/// from the source's own group or the other group depending on the
/// scenario. Source and target identities never coincide. Deterministic
/// given the stream.
pub fn pair_sampler(
    dataset: &SyntheticDataset,
    scenario: PairScenario,
    n_sources: usize,
    n_targets_per_source: usize,
    stream: &Stream,
) -> Result<Vec<AttackPair>> {
    let n_images = dataset.images.len();
    if n_sources > n_images {
        return Err(CoreError::InsufficientData(format!(
            "requested {n_sources} sources from {n_images} images"
        )));
    }
    let identity_pool = |g: Group| -> Vec<usize> {
        let mut ids: Vec<usize> = dataset
            .identities
            .iter()
            .filter(|r| r.group == g)
            .map(|r| global_identity(g, r.identity_index))
            .collect();
        ids.sort_unstable();
        ids
    };
    let pools = [identity_pool(Group::A), identity_pool(Group::B)];

    let mut source_stream = stream.substream_named("sources");
    let source_images = source_stream.sample_without_replacement(n_images, n_sources);
    let target_root = stream.substream_named("targets");

    let mut pairs = Vec::with_capacity(n_sources * n_targets_per_source);
    for (i, &image_index) in source_images.iter().enumerate() {
        let img = &dataset.images[image_index];
        let source_identity = global_identity(img.group, img.identity_index);
        let target_group = match scenario {
            PairScenario::SameGroup => img.group,
            PairScenario::DifferentGroup => img.group.other(),
        };
        let eligible: Vec<usize> = pools[target_group.code() as usize]
            .iter()
            .copied()
            .filter(|&id| id != source_identity)
            .collect();
        if eligible.len() < n_targets_per_source {
            return Err(CoreError::InsufficientData(format!(
                "group {target_group} offers {} eligible targets, need {n_targets_per_source}",
                eligible.len()
            )));
        }
        let mut s = target_root.substream(i as u64);
        for t in s.sample_without_replacement(eligible.len(), n_targets_per_source) {
            pairs.push(AttackPair {
                image_index,
                source_group: img.group,
                source_identity,
                target_identity: eligible[t],
            });
        }
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pca::PcaEmbedder;
    use crate::synthetic::test_params;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn v1(x: f64) -> DVector<f64> {
        DVector::from_vec(vec![x])
    }

    fn default_config() -> AttackConfig {
        AttackConfig {
            epsilon: 1.0,
            step_size: 0.05,
            max_iters: 100,
            kappa: 0.0,
            penalty_init: 0.5,
            penalty_bsearch_steps: 6,
            hinge_variant: HingeVariant::MaxAsWritten,
            seed: 0,
        }
    }

    #[test]
    fn hinge_hand_examples() {
        let e = v1(0.0);
        // Place centroids at distances 1 and 3 from e.
        let target = v1(1.0);
        let others = [v1(3.0)];
        assert_eq!(hinge_loss_g(&e, &target, &others, 0.0, HingeVariant::MaxAsWritten), 0.0);
        assert_abs_diff_eq!(
            hinge_loss_g(&e, &target, &others, 5.0, HingeVariant::MaxAsWritten),
            3.0,
            epsilon = 1e-15
        );
        // All distances equal at κ = 0: the hinge sits exactly at its
        // boundary and stays inactive.
        let others = [v1(-1.0)];
        assert_eq!(hinge_loss_g(&e, &target, &others, 0.0, HingeVariant::MaxAsWritten), 0.0);
    }

    #[test]
    fn hinge_variants_pick_different_competitors() {
        let e = v1(0.0);
        let target = v1(2.0);
        let others = [v1(1.0), v1(10.0)];
        // max variant compares against distance 10, min against 1.
        let g_max = hinge_loss_g(&e, &target, &others, 0.0, HingeVariant::MaxAsWritten);
        let g_min = hinge_loss_g(&e, &target, &others, 0.0, HingeVariant::MinVariant);
        assert_eq!(g_max, 0.0);
        assert_abs_diff_eq!(g_min, 1.0, epsilon = 1e-15);
    }

    /// Full-rank PCA on random data: an isometric linear embedder.
    fn isometric_embedder(d: usize) -> PcaEmbedder {
        let mut s = Stream::root(61);
        let data = DMatrix::from_fn(4 * d, d, |_, _| s.standard_normal());
        PcaEmbedder::fit(&data, d).unwrap()
    }

    #[test]
    fn pgd_with_zero_budget_is_a_no_op() {
        let emb = isometric_embedder(3);
        let x = DVector::from_vec(vec![0.5, -0.2, 0.9]);
        let c = emb.embed(&DVector::zeros(3));
        let mut cfg = default_config();
        cfg.epsilon = 0.0;
        let r = untargeted_pgd(&emb, &x, &c, Group::A, 0, &cfg).unwrap();
        assert_eq!(r.norm, 0.0);
        assert_eq!(r.delta, DVector::zeros(3));
        assert_abs_diff_eq!(
            r.dist_to_source_centroid,
            (emb.embed(&x) - &c).norm(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn pgd_on_isometry_gains_exactly_epsilon() {
        let emb = isometric_embedder(4);
        let x = DVector::from_vec(vec![0.3, 0.1, -0.4, 0.8]);
        let c = emb.embed(&DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0]));
        let initial = (emb.embed(&x) - &c).norm();
        let mut cfg = default_config();
        cfg.epsilon = 0.7;
        cfg.step_size = 0.1;
        cfg.max_iters = 30;
        let r = untargeted_pgd(&emb, &x, &c, Group::A, 0, &cfg).unwrap();
        assert_abs_diff_eq!(r.dist_to_source_centroid, initial + 0.7, epsilon = 1e-6);
        assert!(r.norm <= 0.7 + 1e-9);
    }

    #[test]
    fn pgd_distance_is_monotone_in_epsilon() {
        let emb = isometric_embedder(3);
        let x = DVector::from_vec(vec![0.5, -0.1, 0.2]);
        let c = emb.embed(&DVector::from_vec(vec![0.2, 0.9, -0.3]));
        let mut prev = 0.0;
        for eps in [0.1, 0.2, 0.4, 0.8, 1.6] {
            let mut cfg = default_config();
            cfg.epsilon = eps;
            let r = untargeted_pgd(&emb, &x, &c, Group::A, 0, &cfg).unwrap();
            assert!(
                r.dist_to_source_centroid >= prev,
                "distance dropped at eps={eps}"
            );
            prev = r.dist_to_source_centroid;
        }
    }

    #[test]
    fn judge_untargeted_marks_evasions() {
        let emb = isometric_embedder(2);
        let x = DVector::from_vec(vec![0.1, 0.1]);
        let c = emb.embed(&x);
        let mut cfg = default_config();
        cfg.epsilon = 0.5;
        let mut results = vec![untargeted_pgd(&emb, &x, &c, Group::A, 0, &cfg).unwrap()];
        judge_untargeted_success(&mut results, 0.4);
        assert!(results[0].success, "0.5 of gained distance clears tau = 0.4");
        judge_untargeted_success(&mut results, 10.0);
        assert!(!results[0].success);
    }

    /// 1-D linear embedder psi(x) = w'x as a PCA struct with a single
    /// (non-unit) component, plus two centroids.
    fn scalar_setup() -> (PcaEmbedder, BTreeMap<usize, DVector<f64>>) {
        let w = DVector::from_vec(vec![2.0, 1.0]);
        let emb = PcaEmbedder {
            mean: DVector::zeros(2),
            components: DMatrix::from_column_slice(2, 1, w.as_slice()),
            k: 1,
        };
        let mut centroids = BTreeMap::new();
        centroids.insert(0usize, v1(0.0)); // source identity centroid
        centroids.insert(1usize, v1(5.0)); // target identity centroid
        (emb, centroids)
    }

    #[test]
    fn cw_feasible_at_origin_returns_zero_delta() {
        let (emb, centroids) = scalar_setup();
        // x embeds at 4.9: already nearer the target than the other.
        let x = DVector::from_vec(vec![2.45, 0.0]);
        let r = targeted_cw(&emb, &x, Group::A, 0, 1, &centroids, &default_config()).unwrap();
        assert!(r.success);
        assert_eq!(r.norm, 0.0);
        assert_eq!(r.iterations_used, 0);
    }

    #[test]
    fn cw_with_zero_budget_fails_cleanly() {
        let (emb, centroids) = scalar_setup();
        let x = DVector::from_vec(vec![0.25, 0.0]); // embeds at 0.5, near source
        let mut cfg = default_config();
        cfg.epsilon = 0.0;
        let r = targeted_cw(&emb, &x, Group::A, 0, 1, &centroids, &cfg).unwrap();
        assert!(!r.success);
        assert_eq!(r.norm, 0.0);
    }

    #[test]
    fn cw_reaches_the_analytic_minimal_displacement() {
        let (emb, centroids) = scalar_setup();
        let x = DVector::from_vec(vec![0.25, 0.0]); // embeds at e0 = 0.5
        let mut cfg = default_config();
        cfg.kappa = 0.5;
        cfg.epsilon = 2.0;
        cfg.step_size = 0.005;
        cfg.max_iters = 2000;
        cfg.penalty_bsearch_steps = 8;
        let r = targeted_cw(&emb, &x, Group::A, 0, 1, &centroids, &cfg).unwrap();
        assert!(r.success);
        // Feasibility needs e ≥ (5 + κ)/2 = 2.75, so the embedding must
        // move by 2.25; the minimal input displacement is 2.25 / ‖w‖.
        let analytic = 2.25 / 5.0f64.sqrt();
        assert!(
            (r.norm - analytic).abs() / analytic < 0.05,
            "norm {} vs analytic {analytic}",
            r.norm
        );
    }

    #[test]
    fn cw_success_survives_reverification() {
        let (emb, centroids) = scalar_setup();
        let x = DVector::from_vec(vec![0.25, 0.0]);
        let mut cfg = default_config();
        cfg.epsilon = 2.0;
        cfg.max_iters = 500;
        let r = targeted_cw(&emb, &x, Group::A, 0, 1, &centroids, &cfg).unwrap();
        assert!(r.success);
        let e = emb.embed(&(&x + &r.delta));
        let others = [centroids[&0].clone()];
        let g = hinge_loss_g(&e, &centroids[&1], &others, cfg.kappa, cfg.hinge_variant);
        assert!(g <= 1e-6, "hinge re-check failed: {g}");
        assert!(r.norm <= cfg.epsilon + 1e-9);
    }

    #[test]
    fn cw_rejects_missing_competitor() {
        let (emb, _) = scalar_setup();
        let mut only_target = BTreeMap::new();
        only_target.insert(1usize, v1(5.0));
        let x = DVector::from_vec(vec![0.25, 0.0]);
        let r = targeted_cw(&emb, &x, Group::A, 1, 1, &only_target, &default_config());
        assert!(matches!(r, Err(CoreError::SingularConfiguration(_))));
    }

    fn fixture_results() -> Vec<PerturbationResult> {
        // Hand fixture: two results per group with known distances.
        let mk = |group, ds: f64, dt: f64| PerturbationResult {
            delta: DVector::zeros(1),
            norm: 0.0,
            success: false,
            dist_to_source_centroid: ds,
            dist_to_target_centroid: Some(dt),
            iterations_used: 0,
            source_group: group,
            source_identity: 0,
            target_identity: Some(1),
        };
        vec![
            mk(Group::A, 1.0, 0.5),
            mk(Group::A, 3.0, 2.5),
            mk(Group::B, 2.0, 0.1),
            mk(Group::B, 4.0, 4.0),
        ]
    }

    #[test]
    fn success_curve_limits() {
        let results = fixture_results();
        let rows = success_curve(&results, &[0.0], SuccessMode::Targeted).unwrap();
        assert!(rows.iter().all(|r| r.success_rate == 0.0));
        let rows = success_curve(&results, &[1e18], SuccessMode::Targeted).unwrap();
        assert!(rows.iter().all(|r| r.success_rate == 1.0));
        let rows = success_curve(&results, &[1e18], SuccessMode::Untargeted).unwrap();
        assert!(rows.iter().all(|r| r.success_rate == 0.0));
    }

    #[test]
    fn success_curve_hand_counts() {
        let results = fixture_results();
        // Targeted at tau = 1.0: group a has dists (0.5, 2.5) -> 1/2;
        // group b has (0.1, 4.0) -> 1/2. At tau = 3.0: a -> 2/2, b -> 1/2.
        let rows = success_curve(&results, &[1.0, 3.0], SuccessMode::Targeted).unwrap();
        let find = |g, t: f64| {
            rows.iter()
                .find(|r| r.group == g && r.tau == t)
                .unwrap()
                .success_rate
        };
        assert_eq!(find(Group::A, 1.0), 0.5);
        assert_eq!(find(Group::B, 1.0), 0.5);
        assert_eq!(find(Group::A, 3.0), 1.0);
        assert_eq!(find(Group::B, 3.0), 0.5);
        // Untargeted at tau = 2.0: a has source dists (1,3) -> 1/2; b has
        // (2,4) -> 2/2 (the >= rule counts the exact hit).
        let rows = success_curve(&results, &[2.0], SuccessMode::Untargeted).unwrap();
        assert_eq!(rows[0].success_rate, 0.5);
        assert_eq!(rows[1].success_rate, 1.0);
    }

    #[test]
    fn success_curve_requires_targets_in_targeted_mode() {
        let mut results = fixture_results();
        results[2].dist_to_target_centroid = None;
        assert!(matches!(
            success_curve(&results, &[1.0], SuccessMode::Targeted),
            Err(CoreError::InvalidParameter { .. })
        ));
    }

    fn sampler_dataset() -> SyntheticDataset {
        let mut p = test_params(3, 1.0);
        p.n_identities_a = 5;
        p.n_identities_b = 5;
        p.m = 2;
        SyntheticDataset::sample(&p, &Stream::root(17)).unwrap()
    }

    #[test]
    fn sampler_respects_scenarios_and_counts() {
        let ds = sampler_dataset();
        let same = pair_sampler(&ds, PairScenario::SameGroup, 2, 3, &Stream::root(1)).unwrap();
        assert_eq!(same.len(), 6);
        for p in &same {
            assert_eq!(p.target_identity % 2, p.source_group.code() as usize);
            assert_ne!(p.source_identity, p.target_identity);
        }
        let diff =
            pair_sampler(&ds, PairScenario::DifferentGroup, 2, 3, &Stream::root(1)).unwrap();
        assert_eq!(diff.len(), 6);
        for p in &diff {
            assert_eq!(p.target_identity % 2, p.source_group.other().code() as usize);
        }
    }

    #[test]
    fn sampler_is_deterministic() {
        let ds = sampler_dataset();
        let a = pair_sampler(&ds, PairScenario::SameGroup, 4, 2, &Stream::root(9)).unwrap();
        let b = pair_sampler(&ds, PairScenario::SameGroup, 4, 2, &Stream::root(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampler_rejects_insufficient_identities() {
        let mut p = test_params(3, 1.0);
        p.n_identities_a = 2;
        p.n_identities_b = 2;
        p.m = 1;
        let ds = SyntheticDataset::sample(&p, &Stream::root(3)).unwrap();
        // Same-group targets exclude the source identity: only 1 left.
        assert!(matches!(
            pair_sampler(&ds, PairScenario::SameGroup, 1, 2, &Stream::root(4)),
            Err(CoreError::InsufficientData(_))
        ));
    }

    #[test]
    fn attack_config_validation() {
        let mut cfg = default_config();
        cfg.step_size = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = default_config();
        cfg.epsilon = -1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = default_config();
        cfg.penalty_init = 0.0;
        assert!(cfg.validate().is_err());
    }
}
