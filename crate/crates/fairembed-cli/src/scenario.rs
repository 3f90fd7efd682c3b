//! Scenario execution: each named experiment turns a validated config
//! into a list of CSV artifacts, deterministically.
//!
//! Every stage derives its random stream from the master seed and a fixed
//! stage label, so adding a stage never perturbs earlier stages, and
//! `full_pipeline` produces byte-identical files to the standalone
//! scenarios run with the same seed. All parallel loops preserve input
//! order when collecting, which makes the artifacts independent of the
//! worker-thread count.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;

use fairembed_core::attacks::{
    judge_untargeted_success, pair_sampler, success_curve, targeted_cw, untargeted_pgd,
    AttackPair, PairScenario, PerturbationResult, SuccessMode,
};
use fairembed_core::bounds::{audit_bound, seeded_sweep};
use fairembed_core::csvfmt;
use fairembed_core::eigen::{sample_covariance, sym_eig};
use fairembed_core::embed::Embedder;
use fairembed_core::error::CoreError;
use fairembed_core::matching::{
    build_pairs, centroids_by_identity, embed_dataset, far_threshold, per_group_rows,
    LabeledEmbedding, PairingRule,
};
use fairembed_core::mlp::train_triplets;
use fairembed_core::pca::{
    fit_pca_to_dataset, relative_projection_distance, ProjectionMode,
};
use fairembed_core::stats::{alexander_govern_test, welch_t_test, TestResult};
use fairembed_core::synthetic::{global_identity, Group, SyntheticDataset};
use fairembed_core::Stream;

use crate::config::{EmbedderKind, Scenario, ScenarioConfig};
use crate::error::AppError;

/// One output file: name plus full contents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub content: String,
}

/// Filename-safe rendering of a float (`0.01` -> `0p01`).
fn float_label(v: f64) -> String {
    format!("{v}").replace('-', "m").replace('.', "p")
}

fn pairing_rule_label(rule: PairingRule) -> &'static str {
    match rule {
        PairingRule::AllPairs => "all_pairs",
        PairingRule::SameGroupOnly => "same_group_only",
    }
}

/// Master stream for a config.
fn master_stream(config: &ScenarioConfig) -> Stream {
    Stream::root(config.run.seed)
}

// ---------------------------------------------------------------------
// Shared builders
// ---------------------------------------------------------------------

/// Samples the base dataset (stage label "dataset").
fn base_dataset(config: &ScenarioConfig) -> Result<SyntheticDataset, AppError> {
    let params = config.model.to_params(config.run.seed)?;
    Ok(SyntheticDataset::sample(
        &params,
        &master_stream(config).substream_named("dataset"),
    )?)
}

/// Fits or trains the configured embedder on a dataset (stage label
/// "embedder") and serializes it.
fn build_embedder(
    config: &ScenarioConfig,
    dataset: &SyntheticDataset,
) -> Result<(Box<dyn Embedder>, Vec<Artifact>), AppError> {
    match config.embedder.kind {
        EmbedderKind::Pca => {
            let pca = fit_pca_to_dataset(dataset, config.embedder.k)?;
            let header: Vec<String> = (0..config.model.d).map(|j| format!("x_{j}")).collect();
            let rows: Vec<String> = pca
                .serialize_rows()
                .iter()
                .map(|row| {
                    csvfmt::join_row(&row.iter().map(|&v| csvfmt::fmt_f64(v)).collect::<Vec<_>>())
                })
                .collect();
            let artifact = Artifact {
                name: "embedder_pca.csv".into(),
                content: csvfmt::document(&csvfmt::join_row(&header), &rows),
            };
            Ok((Box::new(pca), vec![artifact]))
        }
        EmbedderKind::Mlp => {
            let mut layer_dims = vec![config.model.d];
            layer_dims.extend_from_slice(&config.embedder.hidden_dims);
            layer_dims.push(config.embedder.k);
            let outcome = train_triplets(
                dataset,
                &layer_dims,
                config.embedder.margin,
                config.embedder.step_size,
                config.embedder.epochs,
                config.embedder.batch_size,
                &master_stream(config).substream_named("embedder"),
            )?;
            let net_csv = {
                let mut text = outcome.net.serialize_lines().join("\n");
                text.push('\n');
                text
            };
            let loss_rows: Vec<String> = outcome
                .epoch_mean_loss
                .iter()
                .enumerate()
                .map(|(e, &loss)| csvfmt::join_row(&[e.to_string(), csvfmt::fmt_f64(loss)]))
                .collect();
            let artifacts = vec![
                Artifact { name: "embedder_mlp.csv".into(), content: net_csv },
                Artifact {
                    name: "embedder_mlp_loss.csv".into(),
                    content: csvfmt::document("epoch,mean_loss", &loss_rows),
                },
            ];
            Ok((Box::new(outcome.net), artifacts))
        }
    }
}

/// Serializes the base dataset (optional artifact).
fn dataset_artifact(config: &ScenarioConfig, dataset: &SyntheticDataset) -> Artifact {
    let header: Vec<String> = ["group", "identity", "image"]
        .iter()
        .map(|s| s.to_string())
        .chain((0..config.model.d).map(|j| format!("x_{j}")))
        .collect();
    let rows: Vec<String> = dataset
        .images
        .iter()
        .map(|img| {
            let mut fields = vec![
                img.group.to_string(),
                img.identity_index.to_string(),
                img.image_index.to_string(),
            ];
            fields.extend(img.x.iter().map(|&v| csvfmt::fmt_f64(v)));
            csvfmt::join_row(&fields)
        })
        .collect();
    Artifact {
        name: "dataset.csv".into(),
        content: csvfmt::document(&csvfmt::join_row(&header), &rows),
    }
}

// ---------------------------------------------------------------------
// Hypothesis-test rows
// ---------------------------------------------------------------------

const STATS_HEADER: &str = "test_name,statistic,dof,p_value,significant,n_groups,n_per_group";

fn stats_row(name: &str, r: &TestResult, sizes: &[usize]) -> String {
    csvfmt::join_row(&[
        name.to_string(),
        csvfmt::fmt_f64(r.statistic),
        csvfmt::fmt_f64(r.dof),
        csvfmt::fmt_f64(r.p_value),
        r.significant.to_string(),
        sizes.len().to_string(),
        sizes.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(";"),
    ])
}

/// Runs a Welch test and appends its row; degenerate inputs (zero
/// variance or too few points) skip the row rather than failing the run.
fn push_welch(
    rows: &mut Vec<String>,
    name: &str,
    sample1: &[f64],
    sample2: &[f64],
) -> Result<(), AppError> {
    match welch_t_test(sample1, sample2) {
        Ok(r) => {
            rows.push(stats_row(name, &r, &[sample1.len(), sample2.len()]));
            Ok(())
        }
        Err(CoreError::DegenerateCovariance(_)) | Err(CoreError::InsufficientData(_)) => Ok(()),
        Err(e) => Err(e.into()),
    }
}

/// Same skip-on-degenerate policy for the Alexander-Govern test.
fn push_ag(rows: &mut Vec<String>, name: &str, samples: &[Vec<f64>]) -> Result<(), AppError> {
    match alexander_govern_test(samples) {
        Ok(r) => {
            let sizes: Vec<usize> = samples.iter().map(|s| s.len()).collect();
            rows.push(stats_row(name, &r, &sizes));
            Ok(())
        }
        Err(CoreError::DegenerateCovariance(_)) | Err(CoreError::InsufficientData(_)) => Ok(()),
        Err(e) => Err(e.into()),
    }
}

/// One-sided row (mean of `sample1` greater than mean of `sample2`),
/// derived from the two-sided Welch result by halving the matching tail.
fn push_welch_one_sided(
    rows: &mut Vec<String>,
    name: &str,
    sample1: &[f64],
    sample2: &[f64],
) -> Result<(), AppError> {
    match welch_t_test(sample1, sample2) {
        Ok(r) => {
            let p_one = if r.statistic > 0.0 { r.p_value / 2.0 } else { 1.0 - r.p_value / 2.0 };
            let one_sided = TestResult {
                statistic: r.statistic,
                dof: r.dof,
                p_value: p_one,
                significant: p_one < 0.05,
            };
            rows.push(stats_row(name, &one_sided, &[sample1.len(), sample2.len()]));
            Ok(())
        }
        Err(CoreError::DegenerateCovariance(_)) | Err(CoreError::InsufficientData(_)) => Ok(()),
        Err(e) => Err(e.into()),
    }
}

// ---------------------------------------------------------------------
// projection_distance
// ---------------------------------------------------------------------

/// Per-image relative projection distances (both coefficient readings),
/// one file per swept gamma.
pub fn scenario_projection_distance(config: &ScenarioConfig) -> Result<Vec<Artifact>, AppError> {
    let master = master_stream(config);
    let mut artifacts = Vec::new();
    for &gamma in &config.projection.gamma_sweep {
        let mut model = config.model.clone();
        model.gamma = gamma;
        let params = model.to_params(config.run.seed)?;
        let stream = master.substream_named("projection").substream(gamma.to_bits());
        let dataset = SyntheticDataset::sample(&params, &stream)?;
        let (_, cov) = sample_covariance(&dataset.image_matrix())?;
        let eig = sym_eig(&cov)?;
        let k = config.embedder.k;
        let rows: Vec<String> = dataset
            .images
            .par_iter()
            .map(|img| -> Result<String, CoreError> {
                let as_written = relative_projection_distance(
                    &img.x,
                    &eig,
                    &params,
                    img.group,
                    k,
                    ProjectionMode::AsWritten,
                )?;
                let orthogonal = relative_projection_distance(
                    &img.x,
                    &eig,
                    &params,
                    img.group,
                    k,
                    ProjectionMode::Orthogonal,
                )?;
                Ok(csvfmt::join_row(&[
                    img.group.to_string(),
                    img.identity_index.to_string(),
                    img.image_index.to_string(),
                    csvfmt::fmt_f64(as_written),
                    csvfmt::fmt_f64(orthogonal),
                ]))
            })
            .collect::<Result<_, _>>()?;
        artifacts.push(Artifact {
            name: format!("projection_distance_gamma_{}.csv", float_label(gamma)),
            content: csvfmt::document(
                "group,identity,image,rpd_as_written,rpd_orthogonal",
                &rows,
            ),
        });
    }
    Ok(artifacts)
}

// ---------------------------------------------------------------------
// bound_audit
// ---------------------------------------------------------------------

/// Closed-form bound vs scan oracle over seeded configurations.
pub fn scenario_bound_audit(config: &ScenarioConfig) -> Result<Vec<Artifact>, AppError> {
    let master = master_stream(config);
    let cases = seeded_sweep(
        config.bound_audit.n_cases,
        &config.bound_audit.gammas,
        config.model.d,
        &master.substream_named("bound_audit"),
    )?;
    let report = audit_bound(
        &cases,
        &config.bound_audit.grid(),
        &config.bound_audit.oracle_options(),
    )?;
    let s = &report.summary;
    let summary_row = csvfmt::join_row(&[
        s.n_cases.to_string(),
        s.n_violations.to_string(),
        s.min_slack.map(csvfmt::fmt_f64).unwrap_or_default(),
        s.mean_slack.map(csvfmt::fmt_f64).unwrap_or_default(),
        csvfmt::fmt_f64(s.max_root_residual),
        csvfmt::fmt_f64(s.max_endpoint_root_gap),
    ]);
    Ok(vec![
        Artifact { name: "bound_audit.csv".into(), content: report.to_csv() },
        Artifact {
            name: "bound_audit_summary.csv".into(),
            content: csvfmt::document(
                "n_cases,n_violations,min_slack,mean_slack,max_root_residual,max_endpoint_root_gap",
                &[summary_row],
            ),
        },
    ])
}

// ---------------------------------------------------------------------
// matching_report
// ---------------------------------------------------------------------

/// TPR/FAR/AUC rows per (group, z, pairing rule) on the base dataset.
pub fn scenario_matching_report(config: &ScenarioConfig) -> Result<Vec<Artifact>, AppError> {
    let master = master_stream(config);
    let dataset = base_dataset(config)?;
    let (embedder, mut artifacts) = build_embedder(config, &dataset)?;
    let embeddings = embed_dataset(&dataset, embedder.as_ref());

    let mut rows = Vec::new();
    for &z in &config.matching.z_values {
        for rule in [PairingRule::AllPairs, PairingRule::SameGroupOnly] {
            // Both rules reuse the same stage stream so their group rows
            // are built from identical genuine-pair subsets.
            let report_rows = per_group_rows(
                &embeddings,
                rule,
                z,
                Some(config.matching.pair_cap),
                &master.substream_named("matching"),
            )?;
            for r in report_rows {
                rows.push(csvfmt::join_row(&[
                    r.group.map(|g| g.to_string()).unwrap_or_else(|| "all".into()),
                    csvfmt::fmt_f64(r.z),
                    csvfmt::fmt_f64(r.tau),
                    csvfmt::fmt_f64(r.far),
                    csvfmt::fmt_f64(r.tpr),
                    csvfmt::fmt_f64(r.auc),
                    r.n_genuine.to_string(),
                    r.n_impostor.to_string(),
                    pairing_rule_label(r.rule).to_string(),
                ]));
            }
        }
    }
    artifacts.push(Artifact {
        name: "matching_report.csv".into(),
        content: csvfmt::document(
            "group,z,tau,far,tpr,auc,n_genuine,n_impostor,pairing_rule",
            &rows,
        ),
    });
    if config.run.emit_dataset {
        artifacts.push(dataset_artifact(config, &dataset));
    }
    Ok(artifacts)
}

// ---------------------------------------------------------------------
// attack_sweep
// ---------------------------------------------------------------------

const ATTACK_HEADER: &str = "source_group,source_identity,target_identity,scenario,\
epsilon,kappa,norm,success,dist_source,dist_target,iters";

fn attack_row(r: &PerturbationResult, scenario: &str, epsilon: f64, kappa: f64) -> String {
    csvfmt::join_row(&[
        r.source_group.to_string(),
        r.source_identity.to_string(),
        r.target_identity.map(|t| t.to_string()).unwrap_or_default(),
        scenario.to_string(),
        csvfmt::fmt_f64(epsilon),
        csvfmt::fmt_f64(kappa),
        csvfmt::fmt_f64(r.norm),
        r.success.to_string(),
        csvfmt::fmt_f64(r.dist_to_source_centroid),
        r.dist_to_target_centroid.map(csvfmt::fmt_f64).unwrap_or_default(),
        r.iterations_used.to_string(),
    ])
}

fn curve_rows(
    out: &mut Vec<String>,
    results: &[PerturbationResult],
    taus: &[f64],
    mode: SuccessMode,
    scenario: &str,
    kappa: f64,
    epsilon: f64,
) -> Result<(), AppError> {
    let mode_label = match mode {
        SuccessMode::Targeted => "targeted",
        SuccessMode::Untargeted => "untargeted",
    };
    for row in success_curve(results, taus, mode)? {
        out.push(csvfmt::join_row(&[
            mode_label.to_string(),
            scenario.to_string(),
            csvfmt::fmt_f64(kappa),
            csvfmt::fmt_f64(epsilon),
            row.group.to_string(),
            csvfmt::fmt_f64(row.tau),
            csvfmt::fmt_f64(row.success_rate),
        ]));
    }
    Ok(())
}

fn norms_of(results: &[PerturbationResult]) -> Vec<f64> {
    results.iter().map(|r| r.norm).collect()
}

fn norms_of_group(results: &[PerturbationResult], group: Group) -> Vec<f64> {
    results.iter().filter(|r| r.source_group == group).map(|r| r.norm).collect()
}

/// Runs targeted attacks for fixed pairs at one margin value.
fn run_targeted(
    pairs: &[AttackPair],
    dataset: &SyntheticDataset,
    embedder: &dyn Embedder,
    centroids: &BTreeMap<usize, DVector<f64>>,
    pool: &BTreeMap<usize, DVector<f64>>,
    config: &ScenarioConfig,
    kappa: f64,
) -> Result<Vec<PerturbationResult>, AppError> {
    let attack_config =
        config.attack.to_attack_config(config.attack.epsilon, kappa, config.run.seed);
    let results = pairs
        .par_iter()
        .map(|p| {
            let mut map = pool.clone();
            map.insert(p.source_identity, centroids[&p.source_identity].clone());
            map.insert(p.target_identity, centroids[&p.target_identity].clone());
            targeted_cw(
                embedder,
                &dataset.images[p.image_index].x,
                p.source_group,
                p.source_identity,
                p.target_identity,
                &map,
                &attack_config,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(results)
}

/// Untargeted budget sweep plus targeted margin sweep, with success
/// curves and hypothesis-test rows.
pub fn scenario_attack_sweep(config: &ScenarioConfig) -> Result<Vec<Artifact>, AppError> {
    let master = master_stream(config);
    let dataset = base_dataset(config)?;
    let (embedder, mut artifacts) = build_embedder(config, &dataset)?;
    let embeddings: Vec<LabeledEmbedding> = embed_dataset(&dataset, embedder.as_ref());
    let centroids = centroids_by_identity(&embeddings);

    // Match threshold at the configured FAR bound judges success.
    let scores = build_pairs(
        &embeddings,
        PairingRule::AllPairs,
        Some(config.matching.pair_cap),
        &master.substream_named("threshold"),
    )?;
    let tau = far_threshold(&scores, config.attack.success_z)?.tau;
    let tau_grid: Vec<f64> = [0.25, 0.5, 0.75, 1.0, 1.5, 2.0].iter().map(|f| f * tau).collect();

    // Fixed competitor pool for the targeted hinge (plus source/target
    // per pair), keeping the per-iteration centroid scan affordable.
    let all_ids: Vec<usize> = centroids.keys().copied().collect();
    let pool: BTreeMap<usize, DVector<f64>> = if all_ids.len() > config.attack.competitor_pool {
        let mut chooser = master.substream_named("competitor-pool");
        let mut picked =
            chooser.sample_without_replacement(all_ids.len(), config.attack.competitor_pool);
        picked.sort_unstable();
        picked
            .into_iter()
            .map(|i| (all_ids[i], centroids[&all_ids[i]].clone()))
            .collect()
    } else {
        centroids.clone()
    };

    let mut curve_out = Vec::new();
    let mut stats_out = Vec::new();

    // --- Untargeted sweep: shared sources across budgets. ---
    let n_images = dataset.images.len();
    if config.attack.n_sources > n_images {
        return Err(AppError::Config(format!(
            "attack.n_sources: {} exceeds the {} available images",
            config.attack.n_sources, n_images
        )));
    }
    let sources = master
        .substream_named("untargeted-sources")
        .sample_without_replacement(n_images, config.attack.n_sources);
    let mut untargeted_rows = Vec::new();
    for &eps in &config.attack.epsilon_sweep {
        let attack_config = config.attack.to_attack_config(eps, 0.0, config.run.seed);
        let mut results = sources
            .par_iter()
            .map(|&idx| {
                let img = &dataset.images[idx];
                let id = global_identity(img.group, img.identity_index);
                untargeted_pgd(embedder.as_ref(), &img.x, &centroids[&id], img.group, id, &attack_config)
            })
            .collect::<Result<Vec<_>, _>>()?;
        judge_untargeted_success(&mut results, tau);
        for r in &results {
            untargeted_rows.push(attack_row(r, "untargeted", eps, 0.0));
        }
        curve_rows(
            &mut curve_out,
            &results,
            &tau_grid,
            SuccessMode::Untargeted,
            "untargeted",
            0.0,
            eps,
        )?;
        let dist_a: Vec<f64> = results
            .iter()
            .filter(|r| r.source_group == Group::A)
            .map(|r| r.dist_to_source_centroid)
            .collect();
        let dist_b: Vec<f64> = results
            .iter()
            .filter(|r| r.source_group == Group::B)
            .map(|r| r.dist_to_source_centroid)
            .collect();
        push_welch(
            &mut stats_out,
            &format!("welch_untargeted_dist_a_vs_b_epsilon_{}", float_label(eps)),
            &dist_a,
            &dist_b,
        )?;
    }
    artifacts.push(Artifact {
        name: "attack_untargeted.csv".into(),
        content: csvfmt::document(ATTACK_HEADER, &untargeted_rows),
    });

    // --- Targeted sweep: pairs fixed per pairing scenario, shared
    // across margins so margin effects are paired. ---
    let pairs_same = pair_sampler(
        &dataset,
        PairScenario::SameGroup,
        config.attack.n_sources,
        config.attack.n_targets_per_source,
        &master.substream_named("pairs-same-group"),
    )?;
    let pairs_diff = pair_sampler(
        &dataset,
        PairScenario::DifferentGroup,
        config.attack.n_sources,
        config.attack.n_targets_per_source,
        &master.substream_named("pairs-different-group"),
    )?;

    for &kappa in &config.attack.kappa_sweep {
        let same = run_targeted(
            &pairs_same, &dataset, embedder.as_ref(), &centroids, &pool, config, kappa,
        )?;
        let diff = run_targeted(
            &pairs_diff, &dataset, embedder.as_ref(), &centroids, &pool, config, kappa,
        )?;
        let mut rows = Vec::with_capacity(same.len() + diff.len());
        for r in &same {
            rows.push(attack_row(r, "same_group", config.attack.epsilon, kappa));
        }
        for r in &diff {
            rows.push(attack_row(r, "different_group", config.attack.epsilon, kappa));
        }
        artifacts.push(Artifact {
            name: format!("attack_targeted_kappa_{}.csv", float_label(kappa)),
            content: csvfmt::document(ATTACK_HEADER, &rows),
        });

        curve_rows(
            &mut curve_out, &same, &tau_grid, SuccessMode::Targeted,
            "same_group", kappa, config.attack.epsilon,
        )?;
        curve_rows(
            &mut curve_out, &diff, &tau_grid, SuccessMode::Targeted,
            "different_group", kappa, config.attack.epsilon,
        )?;

        let label = float_label(kappa);
        push_welch(
            &mut stats_out,
            &format!("welch_norm_same_vs_different_kappa_{label}"),
            &norms_of(&same),
            &norms_of(&diff),
        )?;
        push_welch(
            &mut stats_out,
            &format!("welch_norm_a_vs_b_same_group_kappa_{label}"),
            &norms_of_group(&same, Group::A),
            &norms_of_group(&same, Group::B),
        )?;
        push_welch(
            &mut stats_out,
            &format!("welch_norm_a_vs_b_different_group_kappa_{label}"),
            &norms_of_group(&diff, Group::A),
            &norms_of_group(&diff, Group::B),
        )?;
        push_ag(
            &mut stats_out,
            &format!("ag_norm_scenario_group_cells_kappa_{label}"),
            &[
                norms_of_group(&same, Group::A),
                norms_of_group(&same, Group::B),
                norms_of_group(&diff, Group::A),
                norms_of_group(&diff, Group::B),
            ],
        )?;
    }

    artifacts.push(Artifact {
        name: "attack_success_curves.csv".into(),
        content: csvfmt::document(
            "mode,scenario,kappa,epsilon,group,tau,success_rate",
            &curve_out,
        ),
    });
    artifacts.push(Artifact {
        name: "attack_stats.csv".into(),
        content: csvfmt::document(STATS_HEADER, &stats_out),
    });
    if config.run.emit_dataset {
        artifacts.push(dataset_artifact(config, &dataset));
    }
    Ok(artifacts)
}

// ---------------------------------------------------------------------
// stats_report
// ---------------------------------------------------------------------

/// Hypothesis tests over the projection-distance distributions of the
/// gamma sweep (the same data `projection_distance` writes, by shared
/// stage streams).
pub fn scenario_stats_report(config: &ScenarioConfig) -> Result<Vec<Artifact>, AppError> {
    let master = master_stream(config);
    let mut rows = Vec::new();
    for &gamma in &config.projection.gamma_sweep {
        let mut model = config.model.clone();
        model.gamma = gamma;
        let params = model.to_params(config.run.seed)?;
        let stream = master.substream_named("projection").substream(gamma.to_bits());
        let dataset = SyntheticDataset::sample(&params, &stream)?;
        let (_, cov) = sample_covariance(&dataset.image_matrix())?;
        let eig = sym_eig(&cov)?;
        let k = config.embedder.k;
        for (mode, mode_label) in [
            (ProjectionMode::AsWritten, "as_written"),
            (ProjectionMode::Orthogonal, "orthogonal"),
        ] {
            let per_group = |group: Group| -> Result<Vec<f64>, CoreError> {
                dataset
                    .images
                    .par_iter()
                    .filter(|img| img.group == group)
                    .map(|img| {
                        relative_projection_distance(&img.x, &eig, &params, group, k, mode)
                    })
                    .collect()
            };
            let a = per_group(Group::A)?;
            let b = per_group(Group::B)?;
            let label = float_label(gamma);
            push_welch(
                &mut rows,
                &format!("welch_rpd_{mode_label}_gamma_{label}"),
                &a,
                &b,
            )?;
            push_welch_one_sided(
                &mut rows,
                &format!("welch_rpd_{mode_label}_gamma_{label}_a_gt_b"),
                &a,
                &b,
            )?;
            push_ag(
                &mut rows,
                &format!("ag_rpd_{mode_label}_gamma_{label}"),
                &[a, b],
            )?;
        }
    }
    Ok(vec![Artifact {
        name: "stats_report.csv".into(),
        content: csvfmt::document(STATS_HEADER, &rows),
    }])
}

// ---------------------------------------------------------------------
// Dispatch, writing, manifest
// ---------------------------------------------------------------------

/// Merges artifacts, requiring byte-identical content on name collisions
/// (shared stages of the full pipeline regenerate identical files).
fn merge_artifacts(into: &mut Vec<Artifact>, from: Vec<Artifact>) -> Result<(), AppError> {
    for artifact in from {
        match into.iter().find(|a| a.name == artifact.name) {
            None => into.push(artifact),
            Some(existing) if existing.content == artifact.content => {}
            Some(_) => {
                return Err(AppError::Numeric(format!(
                    "internal: artifact {} regenerated with different content",
                    artifact.name
                )))
            }
        }
    }
    Ok(())
}

/// Runs the configured scenario in memory and returns its artifacts.
pub fn run_scenario(config: &ScenarioConfig) -> Result<Vec<Artifact>, AppError> {
    match config.scenario {
        Scenario::ProjectionDistance => scenario_projection_distance(config),
        Scenario::BoundAudit => scenario_bound_audit(config),
        Scenario::AttackSweep => scenario_attack_sweep(config),
        Scenario::MatchingReport => scenario_matching_report(config),
        Scenario::StatsReport => scenario_stats_report(config),
        Scenario::FullPipeline => {
            let mut all = Vec::new();
            merge_artifacts(&mut all, scenario_projection_distance(config)?)?;
            merge_artifacts(&mut all, scenario_bound_audit(config)?)?;
            merge_artifacts(&mut all, scenario_matching_report(config)?)?;
            merge_artifacts(&mut all, scenario_attack_sweep(config)?)?;
            merge_artifacts(&mut all, scenario_stats_report(config)?)?;
            Ok(all)
        }
    }
}

/// Hex SHA-256 of a string.
fn sha256_hex(text: &str) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Renders the run manifest. Lives outside the CSV set because it carries
/// wall-clock time and must not break byte-comparability of the data
/// files.
pub fn manifest_text(config: &ScenarioConfig, artifacts: &[Artifact]) -> String {
    let wall_clock = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut out = String::new();
    out.push_str("fairembed run manifest\n");
    out.push_str(&format!("scenario: {}\n", config.scenario.name()));
    out.push_str(&format!("seed: {}\n", config.run.seed));
    out.push_str(&format!("config_digest: {}\n", config.digest()));
    out.push_str(&format!(
        "versions: fairembed-core {v}; fairembed-cli {v}\n",
        v = env!("CARGO_PKG_VERSION")
    ));
    out.push_str(&format!("wall_clock_unix: {wall_clock}\n"));
    out.push_str("files:\n");
    for a in artifacts {
        out.push_str(&format!("- {} sha256={}\n", a.name, sha256_hex(&a.content)));
    }
    out
}

/// Writes artifacts plus the manifest into the output directory,
/// returning the written file names (manifest last).
pub fn write_artifacts(
    config: &ScenarioConfig,
    out_dir: &Path,
    artifacts: &[Artifact],
) -> Result<Vec<String>, AppError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| AppError::Io(format!("creating {}: {e}", out_dir.display())))?;
    let mut written = Vec::with_capacity(artifacts.len() + 1);
    for a in artifacts {
        let path = out_dir.join(&a.name);
        std::fs::write(&path, a.content.as_bytes())
            .map_err(|e| AppError::Io(format!("writing {}: {e}", path.display())))?;
        written.push(a.name.clone());
    }
    let manifest_path = out_dir.join("manifest.txt");
    std::fs::write(&manifest_path, manifest_text(config, artifacts))
        .map_err(|e| AppError::Io(format!("writing {}: {e}", manifest_path.display())))?;
    written.push("manifest.txt".into());
    Ok(written)
}

/// Validates, runs inside a worker pool of the configured size, and
/// writes all outputs. Returns the written file names.
pub fn execute(config: &ScenarioConfig) -> Result<Vec<String>, AppError> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.run.threads)
        .build()
        .map_err(|e| AppError::Config(format!("run.threads: {e}")))?;
    let artifacts = pool.install(|| run_scenario(config))?;
    write_artifacts(config, Path::new(&config.run.out_dir), &artifacts)
}
