//! Seeded checks of the two-group hierarchical Gaussian model and its
//! PCA-representation claims: sampled moments track the parameters, the
//! group-a mean relative projection distance falls as the covariance ratio
//! γ rises (under both natural ways of holding one group fixed), covariance
//! contribution ranks opposite to that distance, and same-group pairing
//! never improves the minority group's TPR over all-pairs pairing.

use fairembed_core::eigen::{sample_covariance, sym_eig, SymEigen};
use fairembed_core::matching::{embed_dataset, per_group_rows, PairingRule};
use fairembed_core::pca::{
    covariance_contribution, fit_pca_to_dataset, relative_projection_distance, ProjectionMode,
};
use fairembed_core::synthetic::{Group, HierarchicalGaussianParams, SyntheticDataset};
use fairembed_core::Stream;
use nalgebra::DVector;

const GAMMA_SWEEP: [f64; 4] = [0.01, 0.1, 0.5, 1.0];

fn params(
    d: usize,
    gamma: f64,
    mu_a: Vec<f64>,
    sigma_b_diag: Vec<f64>,
    n: usize,
    m: usize,
    seed: u64,
) -> HierarchicalGaussianParams {
    let p = HierarchicalGaussianParams {
        d,
        gamma,
        beta: 0.05,
        alpha: 0.5,
        mu_a: DVector::from_vec(mu_a),
        sigma_b_diag: DVector::from_vec(sigma_b_diag),
        n_identities_a: n,
        n_identities_b: n,
        m,
        seed,
    };
    p.validate().expect("test parameters must be valid");
    p
}

/// Mean relative projection distance of one group's images against the
/// eigendecomposition of the pooled sample covariance.
fn mean_rpd(
    dataset: &SyntheticDataset,
    eig: &SymEigen,
    group: Group,
    k: usize,
    mode: ProjectionMode,
) -> f64 {
    let mut acc = 0.0;
    let mut n = 0usize;
    for img in dataset.images_of_group(group) {
        acc += relative_projection_distance(&img.x, eig, &dataset.params, group, k, mode)
            .expect("projection distance must evaluate");
        n += 1;
    }
    acc / n as f64
}

fn pooled_eig(dataset: &SyntheticDataset) -> SymEigen {
    let (_, cov) = sample_covariance(&dataset.image_matrix()).expect("covariance must fit");
    sym_eig(&cov).expect("sample covariance must decompose")
}

/// Sweep mean relative projection distance for `group` over `GAMMA_SWEEP`,
/// with `sigma_b_of_gamma` supplying the Σ_b diagonal at each γ.
fn rpd_sweep(
    group: Group,
    mode: ProjectionMode,
    d: usize,
    k: usize,
    mu_a: &[f64],
    sigma_b_of_gamma: impl Fn(f64) -> Vec<f64>,
    n: usize,
    m: usize,
    seed: u64,
) -> Vec<f64> {
    GAMMA_SWEEP
        .iter()
        .map(|&gamma| {
            let p = params(d, gamma, mu_a.to_vec(), sigma_b_of_gamma(gamma), n, m, seed);
            let dataset =
                SyntheticDataset::sample(&p, &Stream::root(seed)).expect("sampling must succeed");
            let eig = pooled_eig(&dataset);
            mean_rpd(&dataset, &eig, group, k, mode)
        })
        .collect()
}

fn assert_strictly_decreasing(values: &[f64], label: &str) {
    for w in values.windows(2) {
        assert!(
            w[1] < w[0],
            "{label}: expected a strict decrease along the γ sweep, got {values:?}"
        );
    }
}

/// Group-a identity covariance held fixed while Σ_b = Σ_a/γ inflates.
///
/// The diagonal is laid out so that each sweep step moves one axis across
/// the top-3 boundary of the pooled covariance: the three μ-loaded axes
/// (weights 0.6/0.25/0.15) are displaced one at a time by the three
/// spoiler axes (identity variance 0.12/0.07/0.05) as γ falls, so the
/// top-3 components capture strictly less group-a mass at every step.
fn sigma_a_profile(d: usize) -> Vec<f64> {
    let mut sigma = vec![0.005; d];
    sigma[0] = 0.02;
    sigma[1] = 0.02;
    sigma[2] = 0.02;
    sigma[3] = 0.12;
    sigma[4] = 0.07;
    sigma[5] = 0.05;
    sigma
}

#[test]
fn group_a_mean_rpd_falls_as_gamma_rises_with_sigma_a_fixed() {
    let d = 12;
    let mu = {
        let mut v = vec![0.0; d];
        v[0] = 0.6f64.sqrt();
        v[1] = 0.25f64.sqrt();
        v[2] = 0.15f64.sqrt();
        v
    };
    let sigma_a = sigma_a_profile(d);
    for mode in [ProjectionMode::AsWritten, ProjectionMode::Orthogonal] {
        let sweep = rpd_sweep(
            Group::A,
            mode,
            d,
            3,
            &mu,
            |gamma| sigma_a.iter().map(|s| s / gamma).collect(),
            300,
            6,
            41,
        );
        let ascending_gamma_has_decreasing_rpd: Vec<f64> = sweep.clone();
        assert_strictly_decreasing(
            &ascending_gamma_has_decreasing_rpd,
            &format!("sigma_a fixed, {mode:?}"),
        );
    }
}

/// Group-b identity covariance held fixed while Σ_a = γΣ_b deflates — the
/// parameterization the scenario harness uses. Shrinking Σ_a shrinks the
/// distance's normalizer while the unexplained tail mass stays put, so the
/// effect is large.
#[test]
fn group_a_mean_rpd_falls_as_gamma_rises_with_sigma_b_fixed() {
    let d = 10;
    let mut mu = vec![0.0; d];
    mu[0] = 1.0;
    // Descending identity variances for group b, 2.0 down to 0.5.
    let sigma_b: Vec<f64> = (0..d).map(|j| 2.0 - 1.5 * j as f64 / (d - 1) as f64).collect();
    for mode in [ProjectionMode::AsWritten, ProjectionMode::Orthogonal] {
        let sweep =
            rpd_sweep(Group::A, mode, d, 3, &mu, |_| sigma_b.clone(), 200, 5, 43);
        assert_strictly_decreasing(&sweep, &format!("sigma_b fixed, {mode:?}"));
    }
}

/// Whichever group's covariance scales with γ, its covariance contribution
/// and its mean relative projection distance order the sweep points in
/// exactly opposite ways (rank correlation −1).
#[test]
fn covariance_contribution_ranks_opposite_to_mean_rpd() {
    struct Case {
        label: &'static str,
        group: Group,
        d: usize,
        mu: Vec<f64>,
        sigma_b_of_gamma: Box<dyn Fn(f64) -> Vec<f64>>,
        seed: u64,
    }
    let d_a = 12;
    let mu_spread = {
        let mut v = vec![0.0; d_a];
        v[0] = 0.6f64.sqrt();
        v[1] = 0.25f64.sqrt();
        v[2] = 0.15f64.sqrt();
        v
    };
    let sigma_a = sigma_a_profile(d_a);
    let d_b = 10;
    let mut mu_axis = vec![0.0; d_b];
    mu_axis[0] = 1.0;
    let sigma_b_desc: Vec<f64> =
        (0..d_b).map(|j| 2.0 - 1.5 * j as f64 / (d_b - 1) as f64).collect();

    let cases = [
        Case {
            label: "group a, sigma_b fixed",
            group: Group::A,
            d: d_b,
            mu: mu_axis,
            sigma_b_of_gamma: Box::new(move |_| sigma_b_desc.clone()),
            seed: 43,
        },
        Case {
            label: "group b, sigma_a fixed",
            group: Group::B,
            d: d_a,
            mu: mu_spread,
            sigma_b_of_gamma: Box::new(move |gamma| {
                sigma_a.iter().map(|s| s / gamma).collect()
            }),
            seed: 41,
        },
    ];

    for case in cases {
        let k = 3;
        let mut contributions = Vec::new();
        for &gamma in &GAMMA_SWEEP {
            let p = params(
                case.d,
                gamma,
                case.mu.clone(),
                (case.sigma_b_of_gamma)(gamma),
                4,
                1,
                case.seed,
            );
            contributions.push(
                covariance_contribution(&p, case.group, k).expect("contribution must evaluate"),
            );
        }
        let rpds = rpd_sweep(
            case.group,
            ProjectionMode::Orthogonal,
            case.d,
            k,
            &case.mu,
            &case.sigma_b_of_gamma,
            300,
            6,
            case.seed,
        );
        for i in 0..GAMMA_SWEEP.len() {
            for j in (i + 1)..GAMMA_SWEEP.len() {
                let c = contributions[i] - contributions[j];
                let r = rpds[i] - rpds[j];
                assert!(
                    c * r < 0.0,
                    "{}: contribution and distance must order sweep points oppositely; \
                     contributions {contributions:?}, distances {rpds:?}",
                    case.label
                );
            }
        }
    }
}

#[test]
fn sampled_moments_track_the_model() {
    let d = 6;
    let mut mu = vec![0.0; d];
    mu[0] = 1.0;
    let sigma_b: Vec<f64> = (0..d).map(|j| 0.4 + 0.1 * j as f64).collect();
    let p = params(d, 0.25, mu, sigma_b, 400, 3, 977);
    let dataset = SyntheticDataset::sample(&p, &Stream::root(p.seed)).unwrap();

    for group in Group::both() {
        // Identity means concentrate at ±μ_a: the CLT error of the average
        // of n identities is ~ sqrt(tr Σ_g / n); allow five times that.
        let ids: Vec<&DVector<f64>> = dataset
            .identities
            .iter()
            .filter(|id| id.group == group)
            .map(|id| &id.nu)
            .collect();
        let n = ids.len() as f64;
        let mut mean = DVector::zeros(d);
        for nu in &ids {
            mean += *nu;
        }
        mean /= n;
        let err = (&mean - p.mu(group)).norm();
        let budget = 5.0 * (p.sigma_trace(group) / n).sqrt();
        assert!(err <= budget, "{group}: identity mean off by {err}, budget {budget}");

        // Image scatter around the identity is isotropic with scale β: the
        // mean of ‖x − ν‖²/d estimates β.
        let mut acc = 0.0;
        let mut count = 0usize;
        for img in dataset.images_of_group(group) {
            let nu = &dataset.identity(group, img.identity_index).unwrap().nu;
            acc += (&img.x - nu).norm_squared() / d as f64;
            count += 1;
        }
        let beta_hat = acc / count as f64;
        // Var(‖z‖²/d) = 2β²/d per image; five sigma of the mean again.
        let se = (2.0 * p.beta * p.beta / d as f64 / count as f64).sqrt();
        assert!(
            (beta_hat - p.beta).abs() <= 5.0 * se,
            "{group}: beta estimate {beta_hat} vs {} ± {se}",
            p.beta
        );
    }
}

/// Restricting impostor pairs to the minority group's own population can
/// only tighten the threshold against that group: at a 5% FAR bound the
/// same-group TPR for group a never exceeds its all-pairs TPR.
#[test]
fn same_group_pairing_does_not_beat_all_pairs_for_the_minority_group() {
    let d = 10;
    let mut mu = vec![0.0; d];
    mu[0] = 1.0;
    let sigma_b: Vec<f64> = (0..d).map(|j| 1.5 - 0.1 * j as f64).collect();
    let p = params(d, 0.01, mu, sigma_b, 80, 4, 59);
    let dataset = SyntheticDataset::sample(&p, &Stream::root(p.seed)).unwrap();
    let embedder = fit_pca_to_dataset(&dataset, 3).unwrap();
    let embeddings = embed_dataset(&dataset, &embedder);
    let stream = Stream::root(p.seed).substream_named("matching");

    let tpr_of = |rule: PairingRule| {
        let rows = per_group_rows(&embeddings, rule, 0.05, Some(20_000), &stream).unwrap();
        rows.into_iter()
            .find(|r| r.group == Some(Group::A))
            .expect("group-a row must exist")
            .tpr
    };
    let same = tpr_of(PairingRule::SameGroupOnly);
    let all = tpr_of(PairingRule::AllPairs);
    assert!(
        same <= all,
        "same-group TPR {same} exceeds all-pairs TPR {all} for group a"
    );

    // The comparison is a seeded regression: repeat runs must reproduce it
    // bit for bit.
    assert_eq!(same, tpr_of(PairingRule::SameGroupOnly));
    assert_eq!(all, tpr_of(PairingRule::AllPairs));
}
