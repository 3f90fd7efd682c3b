//! Matching metrics over labeled embeddings: identity centroids,
//! FAR-constrained thresholds, TPR at a FAR bound, ROC AUC, nearest-centroid
//! classification, and pair generation — all reportable per demographic
//! group.
//!
//! Pair-generation rules are explicit and recorded in every report because
//! "all pairs" and "same-group pairs only" answer different questions: the
//! same-group rule draws its impostors (and therefore its threshold) from
//! within one demographic, while the all-pairs rule pools impostors across
//! demographics. Per-group rows follow that convention: under
//! [`PairingRule::AllPairs`] the threshold is the pooled one and only the
//! genuine pairs are group-restricted; under [`PairingRule::SameGroupOnly`]
//! both the threshold and the genuine pairs come from within the group.

use std::collections::BTreeMap;

use nalgebra::DVector;

use crate::embed::Embedder;
use crate::error::{CoreError, Result};
use crate::stream::Stream;
use crate::synthetic::{Group, SyntheticDataset};

/// An embedded image with its identity and group labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbedding {
    /// Globally unique identity label (unlike the per-group identity
    /// index of the dataset).
    pub identity: usize,
    pub group: Group,
    pub e: DVector<f64>,
}

/// How genuine/impostor pairs were generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairingRule {
    /// Pairs may span demographic groups.
    AllPairs,
    /// Both members of every pair must share a group.
    SameGroupOnly,
}

impl std::fmt::Display for PairingRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PairingRule::AllPairs => "all_pairs",
            PairingRule::SameGroupOnly => "same_group_only",
        })
    }
}

/// Genuine (same-identity) and impostor (cross-identity) pair distances,
/// together with the rule that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct PairScores {
    pub genuine_distances: Vec<f64>,
    pub impostor_distances: Vec<f64>,
    pub rule: PairingRule,
}

/// A resolved FAR-constrained threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchThresholdReport {
    /// Largest candidate threshold whose false-acceptance rate stays
    /// strictly below `z`.
    pub tau: f64,
    /// The FAR bound the threshold was resolved against.
    pub z: f64,
    /// Fraction of impostor distances strictly below `tau`.
    pub achieved_far: f64,
}

/// Mean embedding of one identity.
pub fn centroid(embeddings: &[LabeledEmbedding], identity: usize) -> Result<DVector<f64>> {
    let mut acc: Option<DVector<f64>> = None;
    let mut count = 0usize;
    for le in embeddings.iter().filter(|le| le.identity == identity) {
        match &mut acc {
            None => acc = Some(le.e.clone()),
            Some(a) => *a += &le.e,
        }
        count += 1;
    }
    match acc {
        Some(a) => Ok(a / count as f64),
        None => Err(CoreError::UnknownIdentity(identity)),
    }
}

/// Centroids of every identity present, keyed by identity label.
pub fn centroids_by_identity(
    embeddings: &[LabeledEmbedding],
) -> BTreeMap<usize, DVector<f64>> {
    let mut sums: BTreeMap<usize, (DVector<f64>, usize)> = BTreeMap::new();
    for le in embeddings {
        sums.entry(le.identity)
            .and_modify(|(s, c)| {
                *s += &le.e;
                *c += 1;
            })
            .or_insert_with(|| (le.e.clone(), 1));
    }
    sums.into_iter().map(|(id, (s, c))| (id, s / c as f64)).collect()
}

/// Identity of the l2-nearest centroid; distance ties resolve to the
/// smallest identity label.
pub fn nearest_centroid_classify(
    e: &DVector<f64>,
    centroids: &BTreeMap<usize, DVector<f64>>,
) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (&id, c) in centroids {
        let d = (e - c).norm();
        // Strict improvement only: iteration is in ascending identity
        // order, so the first holder of a distance wins ties.
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((id, d));
        }
    }
    best.map(|(id, _)| id)
        .ok_or(CoreError::EmptyInput("nearest_centroid_classify: centroids"))
}

/// Fraction of `values` strictly below `threshold`, given sorted input.
fn fraction_below_sorted(sorted: &[f64], threshold: f64) -> f64 {
    let below = sorted.partition_point(|&v| v < threshold);
    below as f64 / sorted.len() as f64
}

/// Largest threshold whose false-acceptance rate is strictly below `z`.
///
/// Candidates are the observed impostor distances plus one sentinel above
/// the maximum; FAR is a step function of the threshold, so nothing
/// between candidates can do better. FAR at a candidate counts impostor
/// distances *strictly* below it.
pub fn far_threshold(scores: &PairScores, z: f64) -> Result<MatchThresholdReport> {
    if scores.impostor_distances.is_empty() {
        return Err(CoreError::EmptyInput("far_threshold: impostor distances"));
    }
    if !(z > 0.0 && z <= 1.0) {
        return Err(CoreError::InvalidParameter {
            name: "z",
            reason: format!("FAR bound must lie in (0,1], got {z}"),
        });
    }
    let mut sorted = scores.impostor_distances.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("distances must not be NaN"));
    let sentinel = sorted[sorted.len() - 1] + 1.0;
    let mut candidates: Vec<f64> = sorted.clone();
    candidates.dedup();
    candidates.push(sentinel);
    // FAR is nondecreasing over ascending candidates; take the last
    // feasible one.
    let mut best = None;
    for &tau in &candidates {
        let far = fraction_below_sorted(&sorted, tau);
        if far < z {
            best = Some((tau, far));
        } else {
            break;
        }
    }
    let (tau, achieved_far) = best.expect("the smallest impostor distance always has FAR 0");
    Ok(MatchThresholdReport { tau, z, achieved_far })
}

/// True-positive rate at the FAR-constrained threshold: the fraction of
/// genuine distances strictly below the resolved `tau`.
pub fn tpr_at_far(scores: &PairScores, z: f64) -> Result<(f64, MatchThresholdReport)> {
    if scores.genuine_distances.is_empty() {
        return Err(CoreError::EmptyInput("tpr_at_far: genuine distances"));
    }
    let report = far_threshold(scores, z)?;
    let below = scores
        .genuine_distances
        .iter()
        .filter(|&&d| d < report.tau)
        .count();
    Ok((below as f64 / scores.genuine_distances.len() as f64, report))
}

/// Probability that a random genuine distance is below a random impostor
/// distance, ties counted one half (rank-sum formulation of ROC AUC).
pub fn roc_auc(scores: &PairScores) -> Result<f64> {
    if scores.genuine_distances.is_empty() || scores.impostor_distances.is_empty() {
        return Err(CoreError::EmptyInput("roc_auc: pair distances"));
    }
    let mut imp = scores.impostor_distances.clone();
    imp.sort_by(|a, b| a.partial_cmp(b).expect("distances must not be NaN"));
    let n_i = imp.len() as f64;
    let mut acc = 0.0;
    for &g in &scores.genuine_distances {
        let le = imp.partition_point(|&v| v <= g);
        let lt = imp.partition_point(|&v| v < g);
        let above = imp.len() - le;
        let ties = le - lt;
        acc += above as f64 + 0.5 * ties as f64;
    }
    Ok(acc / (scores.genuine_distances.len() as f64 * n_i))
}

/// Number of unordered pairs of `n` items.
fn pair_count(n: usize) -> u64 {
    let n = n as u64;
    n * (n.saturating_sub(1)) / 2
}

/// Decodes a flat index `t` in `[0, C(n,2))` into the unordered pair
/// `(i, j)` with `i < j`, under the ordering (0,1),(0,2),…,(0,n−1),(1,2),….
fn decode_pair(t: u64, n: usize) -> (usize, usize) {
    let n_u = n as u64;
    // Initial guess for the row from the triangular-number inverse, then
    // correct by at most one step in each direction.
    let base = |i: u64| i * n_u - i * (i + 1) / 2;
    let mut i = {
        let tf = t as f64;
        let nf = n_u as f64;
        let guess = nf - 0.5 - ((nf - 0.5) * (nf - 0.5) - 2.0 * tf).max(0.0).sqrt();
        (guess.floor().max(0.0) as u64).min(n_u - 2)
    };
    while base(i) > t {
        i -= 1;
    }
    while i + 1 <= n_u - 2 && base(i + 1) <= t {
        i += 1;
    }
    let j = i + 1 + (t - base(i));
    (i as usize, j as usize)
}

/// Whether a pair of embeddings is admissible as an impostor pair under a
/// rule: different identities, and same group when the rule demands it.
fn impostor_ok(a: &LabeledEmbedding, b: &LabeledEmbedding, rule: PairingRule) -> bool {
    a.identity != b.identity
        && (rule == PairingRule::AllPairs || a.group == b.group)
}

/// Generates genuine and impostor pair distances.
///
/// Genuine pairs (same identity) are enumerated exactly; impostor pairs are
/// enumerated exactly when that is affordable, otherwise sampled. `cap`
/// bounds each list independently: lists longer than the cap are subsampled
/// uniformly (seeded, without replacement). A cap at or above the full pair
/// population reproduces the uncapped output. Output order is a
/// deterministic function of the inputs and the stream only.
pub fn build_pairs(
    embeddings: &[LabeledEmbedding],
    rule: PairingRule,
    cap: Option<usize>,
    stream: &Stream,
) -> Result<PairScores> {
    let mut identity_sizes: BTreeMap<usize, usize> = BTreeMap::new();
    for le in embeddings {
        *identity_sizes.entry(le.identity).or_insert(0) += 1;
    }
    if identity_sizes.len() < 2 {
        return Err(CoreError::InsufficientData(format!(
            "pair generation needs at least 2 identities, got {}",
            identity_sizes.len()
        )));
    }

    // Genuine pairs: exact enumeration per identity, in identity order.
    let mut by_identity: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (idx, le) in embeddings.iter().enumerate() {
        by_identity.entry(le.identity).or_default().push(idx);
    }
    let mut genuine = Vec::new();
    for members in by_identity.values() {
        for (a, &i) in members.iter().enumerate() {
            for &j in &members[a + 1..] {
                genuine.push((embeddings[i].e.clone() - &embeddings[j].e).norm());
            }
        }
    }
    if let Some(cap) = cap {
        if genuine.len() > cap {
            let mut chosen = stream
                .substream_named("genuine")
                .sample_without_replacement(genuine.len(), cap);
            chosen.sort_unstable();
            genuine = chosen.into_iter().map(|i| genuine[i]).collect();
        }
    }

    // Impostor pairs: count the admissible population first so a generous
    // cap degrades to exact enumeration.
    let total_pairs = pair_count(embeddings.len());
    let same_identity_pairs: u64 = identity_sizes.values().map(|&c| pair_count(c)).sum();
    let admissible = match rule {
        PairingRule::AllPairs => total_pairs - same_identity_pairs,
        PairingRule::SameGroupOnly => {
            let mut group_sizes: BTreeMap<u64, usize> = BTreeMap::new();
            for le in embeddings {
                *group_sizes.entry(le.group.code()).or_insert(0) += 1;
            }
            let within_group: u64 = group_sizes.values().map(|&c| pair_count(c)).sum();
            within_group - same_identity_pairs
        }
    };

    let impostor = match cap {
        Some(cap) if (cap as u64) < admissible => {
            // Sample distinct admissible pairs by drawing flat triangular
            // indices and rejecting inadmissible or repeated ones.
            let mut s = stream.substream_named("impostor");
            let mut chosen: std::collections::BTreeSet<u64> = std::collections::BTreeSet::new();
            let mut attempts: u64 = 0;
            let attempt_limit = 10_000u64.max(2_000 * cap as u64);
            while chosen.len() < cap {
                attempts += 1;
                if attempts > attempt_limit {
                    return Err(CoreError::NumericFailure(format!(
                        "impostor pair sampling stalled after {attempts} attempts \
                         (requested {cap} of {admissible} admissible pairs)"
                    )));
                }
                let t = s.next_u64() % total_pairs;
                let (i, j) = decode_pair(t, embeddings.len());
                if impostor_ok(&embeddings[i], &embeddings[j], rule) {
                    chosen.insert(t);
                }
            }
            chosen
                .into_iter()
                .map(|t| {
                    let (i, j) = decode_pair(t, embeddings.len());
                    (embeddings[i].e.clone() - &embeddings[j].e).norm()
                })
                .collect()
        }
        _ => {
            let mut out = Vec::new();
            for i in 0..embeddings.len() {
                for j in (i + 1)..embeddings.len() {
                    if impostor_ok(&embeddings[i], &embeddings[j], rule) {
                        out.push((embeddings[i].e.clone() - &embeddings[j].e).norm());
                    }
                }
            }
            out
        }
    };

    Ok(PairScores { genuine_distances: genuine, impostor_distances: impostor, rule })
}

/// Embeds every image of a dataset and attaches labels. Identity labels
/// are made globally unique via [`crate::synthetic::global_identity`],
/// which preserves the within-group ordering.
pub fn embed_dataset(dataset: &SyntheticDataset, embedder: &dyn Embedder) -> Vec<LabeledEmbedding> {
    dataset
        .images
        .iter()
        .map(|img| LabeledEmbedding {
            identity: crate::synthetic::global_identity(img.group, img.identity_index),
            group: img.group,
            e: embedder.embed(&img.x),
        })
        .collect()
}

/// One row of a per-group matching report.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupReportRow {
    /// `None` is the overall (pooled) row.
    pub group: Option<Group>,
    pub rule: PairingRule,
    pub z: f64,
    pub tau: f64,
    pub far: f64,
    pub tpr: f64,
    pub auc: f64,
    pub n_genuine: usize,
    pub n_impostor: usize,
}

/// Builds the overall row plus one row per group for a pairing rule and a
/// FAR bound `z`.
///
/// Under `AllPairs` the threshold comes from the pooled impostor set and
/// group rows restrict only the genuine pairs; under `SameGroupOnly` each
/// group row resolves its own threshold from within-group impostors. Group
/// subsets reuse substreams keyed by group alone, so the group-a genuine
/// list is identical across rules and the two rules' group rows are
/// directly comparable.
pub fn per_group_rows(
    embeddings: &[LabeledEmbedding],
    rule: PairingRule,
    z: f64,
    cap: Option<usize>,
    stream: &Stream,
) -> Result<Vec<GroupReportRow>> {
    let overall_scores = build_pairs(embeddings, rule, cap, &stream.substream_named("overall"))?;
    let (overall_tpr, overall_report) = tpr_at_far(&overall_scores, z)?;
    let mut rows = vec![GroupReportRow {
        group: None,
        rule,
        z,
        tau: overall_report.tau,
        far: overall_report.achieved_far,
        tpr: overall_tpr,
        auc: roc_auc(&overall_scores)?,
        n_genuine: overall_scores.genuine_distances.len(),
        n_impostor: overall_scores.impostor_distances.len(),
    }];

    for group in Group::both() {
        let subset: Vec<LabeledEmbedding> =
            embeddings.iter().filter(|le| le.group == group).cloned().collect();
        if subset.is_empty() {
            continue;
        }
        let sub_stream = stream.substream_named("group").substream(group.code());
        // Within one group every pair is same-group, so the subset is
        // always built with the all-pairs rule; the report row still
        // records the requested rule.
        let sub_scores = build_pairs(&subset, PairingRule::AllPairs, cap, &sub_stream)?;
        let row = match rule {
            PairingRule::AllPairs => {
                let tpr = sub_scores
                    .genuine_distances
                    .iter()
                    .filter(|&&d| d < overall_report.tau)
                    .count() as f64
                    / sub_scores.genuine_distances.len().max(1) as f64;
                let auc_scores = PairScores {
                    genuine_distances: sub_scores.genuine_distances.clone(),
                    impostor_distances: overall_scores.impostor_distances.clone(),
                    rule,
                };
                GroupReportRow {
                    group: Some(group),
                    rule,
                    z,
                    tau: overall_report.tau,
                    far: overall_report.achieved_far,
                    tpr,
                    auc: roc_auc(&auc_scores)?,
                    n_genuine: sub_scores.genuine_distances.len(),
                    n_impostor: overall_scores.impostor_distances.len(),
                }
            }
            PairingRule::SameGroupOnly => {
                let (tpr, report) = tpr_at_far(&sub_scores, z)?;
                GroupReportRow {
                    group: Some(group),
                    rule,
                    z,
                    tau: report.tau,
                    far: report.achieved_far,
                    tpr,
                    auc: roc_auc(&sub_scores)?,
                    n_genuine: sub_scores.genuine_distances.len(),
                    n_impostor: sub_scores.impostor_distances.len(),
                }
            }
        };
        rows.push(row);
    }
    Ok(rows)
}
