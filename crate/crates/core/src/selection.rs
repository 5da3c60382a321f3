//! Set-level floating feature selection wrapped around cross-validated KNN
//! accuracy, and per-feature pairwise Student's t-test filtering.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::classify::KnnModel;
use crate::error::{Error, Result};
use crate::features::{FeatureSetId, SubjectFeatures};
use crate::ingest::ClassLabel;
use crate::seeding::derive_seed;

// ---------------------------------------------------------------------------
// Student's t distribution via the regularized incomplete beta function.
// ---------------------------------------------------------------------------

/// ln Gamma(z) for z > 0 (Lanczos approximation).
fn ln_gamma(z: f64) -> f64 {
    const COEFFS: [f64; 6] = [
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let mut sum = 1.000000000190015;
    for (i, c) in COEFFS.iter().enumerate() {
        sum += c / (z + i as f64 + 1.0);
    }
    let tmp = z + 5.5;
    (z + 0.5) * tmp.ln() - tmp + (2.5066282746310005 * sum / z).ln()
}

/// Regularized incomplete beta I_x(a, b), continued fraction evaluated with
/// the modified Lentz method.
fn regularized_inc_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    // symmetry relation keeps the continued fraction in its fast region
    if x > (a + 1.0) / (a + b + 2.0) {
        return 1.0 - regularized_inc_beta(1.0 - x, b, a);
    }

    let ln_front = a * x.ln() + b * (1.0 - x).ln() - (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b));
    let front = ln_front.exp();

    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let mut c = 1.0f64;
    let mut d = 0.0f64;
    let mut f = 1.0f64;
    let step = |numerator: f64, c: &mut f64, d: &mut f64| -> f64 {
        *d = 1.0 + numerator * *d;
        if d.abs() < TINY {
            *d = TINY;
        }
        *d = 1.0 / *d;
        *c = 1.0 + numerator / *c;
        if c.abs() < TINY {
            *c = TINY;
        }
        *c * *d
    };
    for m in 0..400 {
        let mf = m as f64;
        let odd = -(a + mf) * (a + b + mf) * x / ((a + 2.0 * mf) * (a + 2.0 * mf + 1.0));
        let delta = step(odd, &mut c, &mut d);
        f *= delta;
        let even = (mf + 1.0) * (b - mf - 1.0) * x / ((a + 2.0 * mf + 1.0) * (a + 2.0 * mf + 2.0));
        let delta = step(even, &mut c, &mut d);
        f *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    front / (a * f)
}

/// Cumulative distribution of Student's t with `df` degrees of freedom.
pub fn t_cdf(t: f64, df: usize) -> f64 {
    assert!(df >= 1, "degrees of freedom must be at least 1");
    if t == 0.0 {
        return 0.5;
    }
    let v = df as f64;
    let x = v / (v + t * t);
    let half_tail = 0.5 * regularized_inc_beta(x, v / 2.0, 0.5);
    if t > 0.0 {
        1.0 - half_tail
    } else {
        half_tail
    }
}

/// Result of a pooled-variance two-sample t-test.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TTestResult {
    pub t_statistic: f64,
    pub degrees_of_freedom: usize,
    /// Two-tailed.
    pub p_value: f64,
    /// Set when both samples were exactly constant and the statistic is a
    /// convention rather than a computation.
    pub degenerate: bool,
}

/// Pooled-variance two-sample Student's t-test (equal unknown variances),
/// two-tailed p-value. When both samples are exactly constant the p-value is
/// defined as 1 for equal means and 0 otherwise, flagged as degenerate.
pub fn pooled_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    let (n_a, n_b) = (a.len(), b.len());
    if n_a < 2 || n_b < 2 {
        return Err(Error::InvalidInput(format!(
            "t-test needs at least 2 samples per group, got {n_a} and {n_b}"
        )));
    }
    let df = n_a + n_b - 2;

    let const_a = a.iter().all(|v| *v == a[0]);
    let const_b = b.iter().all(|v| *v == b[0]);
    if const_a && const_b {
        return Ok(if a[0] == b[0] {
            TTestResult { t_statistic: 0.0, degrees_of_freedom: df, p_value: 1.0, degenerate: true }
        } else {
            TTestResult {
                t_statistic: if a[0] > b[0] { f64::INFINITY } else { f64::NEG_INFINITY },
                degrees_of_freedom: df,
                p_value: 0.0,
                degenerate: true,
            }
        });
    }

    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let mean_a = mean(a);
    let mean_b = mean(b);
    let ss = |s: &[f64], m: f64| s.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    let pooled_var = (ss(a, mean_a) + ss(b, mean_b)) / df as f64;
    let se = (pooled_var * (1.0 / n_a as f64 + 1.0 / n_b as f64)).sqrt();
    let t = (mean_a - mean_b) / se;
    let p = 2.0 * (1.0 - t_cdf(t.abs(), df));
    Ok(TTestResult {
        t_statistic: t,
        degrees_of_freedom: df,
        p_value: p.clamp(0.0, 1.0),
        degenerate: false,
    })
}

// ---------------------------------------------------------------------------
// Stratified folds and the wrapped KNN criterion.
// ---------------------------------------------------------------------------

/// Fold ids per subject, assigned round-robin within each class after a
/// seeded shuffle.
#[derive(Debug, Clone)]
pub struct FoldAssignment {
    pub fold_of: Vec<usize>,
    pub n_folds: usize,
}

pub fn stratified_folds(labels: &[ClassLabel], n_folds: usize, seed: u64) -> Result<FoldAssignment> {
    if n_folds < 2 {
        return Err(Error::InvalidConfig("need at least 2 folds".into()));
    }
    let mut fold_of = vec![0usize; labels.len()];
    for class in ClassLabel::ALL {
        let mut members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == class)
            .map(|(i, _)| i)
            .collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < n_folds {
            return Err(Error::TooFewSubjects {
                class: class.name(),
                need: n_folds,
                got: members.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x0F0F ^ class.code() as u64));
        members.shuffle(&mut rng);
        for (pos, idx) in members.into_iter().enumerate() {
            fold_of[idx] = pos % n_folds;
        }
    }
    Ok(FoldAssignment { fold_of, n_folds })
}

/// Mean per-fold accuracy of a standardized KNN classifier over the given
/// folds. Features are z-scored by fold-training statistics; `k` is clamped
/// to the fold-training size.
pub fn criterion_accuracy(
    data: ArrayView2<'_, f64>,
    labels: &[ClassLabel],
    folds: &FoldAssignment,
    knn_k: usize,
) -> Result<f64> {
    let n = data.nrows();
    if labels.len() != n || folds.fold_of.len() != n {
        return Err(Error::InvalidInput("criterion inputs disagree on subject count".into()));
    }
    let mut fold_acc_sum = 0.0;
    for fold in 0..folds.n_folds {
        let train_idx: Vec<usize> = (0..n).filter(|i| folds.fold_of[*i] != fold).collect();
        let val_idx: Vec<usize> = (0..n).filter(|i| folds.fold_of[*i] == fold).collect();
        if val_idx.is_empty() || train_idx.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "fold {fold} is degenerate ({} train, {} validation)",
                train_idx.len(),
                val_idx.len()
            )));
        }
        let mut train = Array2::zeros((train_idx.len(), data.ncols()));
        let mut train_labels = Vec::with_capacity(train_idx.len());
        for (r, &i) in train_idx.iter().enumerate() {
            train.row_mut(r).assign(&data.row(i));
            train_labels.push(labels[i]);
        }
        let k = knn_k.min(train_idx.len());
        let model = KnnModel::fit(train.view(), &train_labels, k)?;
        let correct = val_idx
            .iter()
            .filter(|&&i| {
                model
                    .predict(&data.row(i).to_vec())
                    .map(|p| p == labels[i])
                    .unwrap_or(false)
            })
            .count();
        fold_acc_sum += correct as f64 / val_idx.len() as f64;
    }
    Ok(fold_acc_sum / folds.n_folds as f64)
}

// ---------------------------------------------------------------------------
// Floating set selection.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct SfffsConfig {
    /// Internal cross-validation folds for the criterion.
    pub criterion_folds: usize,
    pub knn_k: usize,
    /// Fold-assignment seed.
    pub seed: u64,
    /// Cap on the number of selected sets.
    pub max_sets: usize,
}

impl Default for SfffsConfig {
    fn default() -> Self {
        Self { criterion_folds: 5, knn_k: 5, seed: 7, max_sets: 6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StepKind {
    #[serde(rename = "add")]
    Add,
    #[serde(rename = "remove")]
    Remove,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SelectionStep {
    pub kind: StepKind,
    pub set: FeatureSetId,
    pub criterion: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SfffsOutcome {
    /// Selected sets in enumeration order.
    pub selected_sets: Vec<FeatureSetId>,
    pub trace: Vec<SelectionStep>,
    /// Criterion value of the final selection.
    pub criterion: f64,
}

/// Concatenate the named sets (in enumeration order) from every subject into
/// a subjects x features matrix.
pub fn assemble_set_matrix(features: &[SubjectFeatures], sets: &[FeatureSetId]) -> Array2<f64> {
    let mut ordered: Vec<FeatureSetId> = sets.to_vec();
    ordered.sort();
    ordered.dedup();
    let width: usize = ordered
        .iter()
        .map(|s| features.first().map_or(0, |f| f.layout.range(*s).len()))
        .sum();
    let mut data = Array2::zeros((features.len(), width));
    for (r, subject) in features.iter().enumerate() {
        let mut cursor = 0;
        for set in &ordered {
            let slice = subject.set_slice(*set);
            for (c, v) in slice.iter().enumerate() {
                data[[r, cursor + c]] = *v;
            }
            cursor += slice.len();
        }
    }
    data
}

/// Classic floating search over the six feature sets: repeatedly add the set
/// that maximizes the wrapped criterion, then remove already-selected sets
/// while doing so strictly improves it. Terminates when no addition improves
/// the criterion or the cap is reached. Ties prefer the smaller selection,
/// then enumeration order. Deterministic given the seed.
pub fn sfffs_select_sets(
    features: &[SubjectFeatures],
    labels: &[ClassLabel],
    cfg: &SfffsConfig,
) -> Result<SfffsOutcome> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} feature vectors for {} labels",
            features.len(),
            labels.len()
        )));
    }
    let folds = stratified_folds(labels, cfg.criterion_folds, cfg.seed)?;
    let max_sets = cfg.max_sets.clamp(1, FeatureSetId::ALL.len());

    let evaluate = |sets: &[FeatureSetId]| -> Result<f64> {
        let data = assemble_set_matrix(features, sets);
        criterion_accuracy(data.view(), labels, &folds, cfg.knn_k)
    };

    let mut selected: Vec<FeatureSetId> = Vec::new();
    let mut current = f64::NEG_INFINITY;
    let mut trace = Vec::new();

    loop {
        if selected.len() >= max_sets {
            break;
        }
        // forward: best addition, ties to enumeration order
        let mut best_add: Option<(f64, FeatureSetId)> = None;
        for set in FeatureSetId::ALL {
            if selected.contains(&set) {
                continue;
            }
            let mut candidate = selected.clone();
            candidate.push(set);
            candidate.sort();
            let j = evaluate(&candidate)?;
            if best_add.is_none_or(|(bj, _)| j > bj) {
                best_add = Some((j, set));
            }
        }
        match best_add {
            Some((j, set)) if j > current => {
                selected.push(set);
                selected.sort();
                current = j;
                trace.push(SelectionStep { kind: StepKind::Add, set, criterion: j });
            }
            _ => break,
        }
        // backward: keep removing while it strictly improves the criterion
        while selected.len() > 1 {
            let mut best_remove: Option<(f64, FeatureSetId)> = None;
            for set in selected.clone() {
                let candidate: Vec<FeatureSetId> =
                    selected.iter().copied().filter(|s| *s != set).collect();
                let j = evaluate(&candidate)?;
                if best_remove.is_none_or(|(bj, _)| j > bj) {
                    best_remove = Some((j, set));
                }
            }
            match best_remove {
                Some((j, set)) if j > current => {
                    selected.retain(|s| *s != set);
                    current = j;
                    trace.push(SelectionStep { kind: StepKind::Remove, set, criterion: j });
                }
                _ => break,
            }
        }
    }

    Ok(SfffsOutcome { selected_sets: selected, trace, criterion: current })
}

// ---------------------------------------------------------------------------
// Per-feature significance filtering.
// ---------------------------------------------------------------------------

/// How the three pairwise tests combine into one keep/drop decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CombinationRule {
    /// Keep a feature significant in at least one pairwise comparison.
    #[serde(rename = "union")]
    Union,
    /// Keep a feature significant in all three pairwise comparisons.
    #[serde(rename = "intersection")]
    Intersection,
}

pub const CLASS_PAIRS: [(ClassLabel, ClassLabel); 3] = [
    (ClassLabel::Alzheimer, ClassLabel::Mci),
    (ClassLabel::Alzheimer, ClassLabel::Normal),
    (ClassLabel::Mci, ClassLabel::Normal),
];

/// Significant-feature counts per pairwise comparison.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PairwiseCounts {
    pub alz_mci: usize,
    pub alz_normal: usize,
    pub mci_normal: usize,
}

impl PairwiseCounts {
    pub fn as_array(&self) -> [usize; 3] {
        [self.alz_mci, self.alz_normal, self.mci_normal]
    }

    fn bump(&mut self, pair: usize) {
        match pair {
            0 => self.alz_mci += 1,
            1 => self.alz_normal += 1,
            _ => self.mci_normal += 1,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SignificanceOutcome {
    /// Keep/drop per feature column.
    pub mask: Vec<bool>,
    pub pairwise_counts: PairwiseCounts,
    /// Columns that were constant across all training subjects, excluded
    /// from testing and from the mask.
    pub degenerate_features: Vec<usize>,
}

impl SignificanceOutcome {
    pub fn kept_indices(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, keep)| **keep)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Run the pooled t-test per feature for each of the three class pairs and
/// keep features per the combination rule at significance `alpha`. Features
/// constant across all training subjects are excluded and reported
/// separately.
pub fn significance_filter(
    data: ArrayView2<'_, f64>,
    labels: &[ClassLabel],
    alpha: f64,
    rule: CombinationRule,
) -> Result<SignificanceOutcome> {
    let (n, cols) = data.dim();
    if labels.len() != n {
        return Err(Error::InvalidInput(format!("{} labels for {n} subjects", labels.len())));
    }
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    for class in ClassLabel::ALL {
        let count = labels.iter().filter(|l| **l == class).count();
        if count < 2 {
            return Err(Error::TooFewSubjects { class: class.name(), need: 2, got: count });
        }
    }
    let class_rows: [Vec<usize>; 3] = ClassLabel::ALL.map(|class| {
        labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == class)
            .map(|(i, _)| i)
            .collect()
    });

    let mut mask = vec![false; cols];
    let mut counts = PairwiseCounts::default();
    let mut degenerate = Vec::new();
    for (j, keep) in mask.iter_mut().enumerate() {
        let col = data.column(j);
        let first = col[0];
        if col.iter().all(|v| *v == first) {
            degenerate.push(j);
            continue;
        }
        let mut significant = [false; 3];
        for (pair_idx, (ca, cb)) in CLASS_PAIRS.iter().enumerate() {
            let a: Vec<f64> = class_rows[ca.index()].iter().map(|&i| col[i]).collect();
            let b: Vec<f64> = class_rows[cb.index()].iter().map(|&i| col[i]).collect();
            let result = pooled_t_test(&a, &b)?;
            if result.p_value < alpha {
                significant[pair_idx] = true;
                counts.bump(pair_idx);
            }
        }
        *keep = match rule {
            CombinationRule::Union => significant.iter().any(|s| *s),
            CombinationRule::Intersection => significant.iter().all(|s| *s),
        };
    }
    Ok(SignificanceOutcome { mask, pairwise_counts: counts, degenerate_features: degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureLayout;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn t_cdf_reference_points() {
        for df in [1usize, 2, 5, 10, 30, 200] {
            assert_eq!(t_cdf(0.0, df), 0.5);
        }
        // df = 1 is Cauchy: F(t) = 1/2 + atan(t)/pi
        assert_relative_eq!(t_cdf(1.0, 1), 0.75, max_relative = 1e-12);
        assert_relative_eq!(
            t_cdf(-2.0, 1),
            0.5 + (-2.0f64).atan() / std::f64::consts::PI,
            max_relative = 1e-12
        );
        // large df approaches the normal distribution
        assert!((t_cdf(1.96, 200) - 0.9743).abs() < 1e-3);
    }

    #[test]
    fn t_cdf_symmetry_and_monotonicity() {
        for df in [1usize, 3, 8, 50] {
            let mut prev = 0.0;
            for i in 0..=100 {
                let t = -5.0 + 0.1 * i as f64;
                let c = t_cdf(t, df);
                assert!((t_cdf(t, df) + t_cdf(-t, df) - 1.0).abs() < 1e-10);
                assert!(c >= prev, "non-monotone at {t}, df {df}");
                prev = c;
            }
        }
    }

    #[test]
    fn pooled_test_hand_computed_example() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [2.0, 3.0, 4.0, 5.0, 6.0];
        let r = pooled_t_test(&a, &b).unwrap();
        assert_relative_eq!(r.t_statistic, -1.0, max_relative = 1e-12);
        assert_eq!(r.degrees_of_freedom, 8);
        assert!((r.p_value - 0.3466).abs() < 1e-4, "p = {}", r.p_value);
        assert!(!r.degenerate);

        // antisymmetry under swapping
        let s = pooled_t_test(&b, &a).unwrap();
        assert_eq!(s.t_statistic, -r.t_statistic);
        assert_eq!(s.p_value, r.p_value);
    }

    #[test]
    fn pooled_test_identical_and_degenerate_samples() {
        let a = [0.3, 1.7, -2.2, 0.9];
        let r = pooled_t_test(&a, &a).unwrap();
        assert_eq!(r.t_statistic, 0.0);
        assert_eq!(r.p_value, 1.0);

        let r = pooled_t_test(&[2.0, 2.0, 2.0], &[2.0, 2.0]).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p_value, 1.0);
        let r = pooled_t_test(&[3.0, 3.0], &[2.0, 2.0]).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p_value, 0.0);
        assert!(r.t_statistic.is_infinite() && r.t_statistic > 0.0);

        assert!(pooled_t_test(&[1.0], &[1.0, 2.0]).is_err());
    }

    fn synthetic_features(
        seed: u64,
        per_class: usize,
        informative: &[(FeatureSetId, f64)],
    ) -> (Vec<SubjectFeatures>, Vec<ClassLabel>) {
        // Builds per-subject vectors where every set is pure noise except the
        // listed ones, which get a class-dependent mean shift of the given
        // strength.
        let n_regions = 4; // layout: 4 sets of 4 + 2 sets of 6 = 28 dims
        let layout = FeatureLayout::new(n_regions, None);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for class in ClassLabel::ALL {
            for s in 0..per_class {
                let mut vector = vec![0.0; layout.total_len()];
                for v in vector.iter_mut() {
                    *v = normal.sample(&mut rng);
                }
                for (set, strength) in informative {
                    let range = layout.range(*set);
                    for idx in range {
                        vector[idx] += strength * class.index() as f64;
                    }
                }
                features.push(SubjectFeatures {
                    subject_id: format!("{}_{s}", class.name()),
                    vector,
                    layout: layout.clone(),
                });
                labels.push(class);
            }
        }
        (features, labels)
    }

    #[test]
    fn sfffs_finds_the_single_informative_set() {
        let (features, labels) =
            synthetic_features(21, 12, &[(FeatureSetId::IeEnt, 3.0)]);
        let cfg = SfffsConfig { criterion_folds: 4, knn_k: 3, seed: 5, max_sets: 6 };
        let out = sfffs_select_sets(&features, &labels, &cfg).unwrap();
        assert_eq!(out.selected_sets, vec![FeatureSetId::IeEnt]);

        // exhaustive oracle over all 63 non-empty subsets
        let folds = stratified_folds(&labels, cfg.criterion_folds, cfg.seed).unwrap();
        let mut best = f64::NEG_INFINITY;
        for bits in 1u32..64 {
            let sets: Vec<FeatureSetId> = FeatureSetId::ALL
                .into_iter()
                .enumerate()
                .filter(|(i, _)| bits & (1 << i) != 0)
                .map(|(_, s)| s)
                .collect();
            let data = assemble_set_matrix(&features, &sets);
            let j = criterion_accuracy(data.view(), &labels, &folds, cfg.knn_k).unwrap();
            best = best.max(j);
        }
        assert!(
            out.criterion >= best - 1e-12,
            "sfffs {} vs exhaustive {best}",
            out.criterion
        );
    }

    #[test]
    fn sfffs_on_duplicated_sets_selects_exactly_one() {
        // all six sets identical copies: adding a second never improves
        let (mut features, labels) =
            synthetic_features(33, 10, &[(FeatureSetId::IpPow, 2.0)]);
        for f in features.iter_mut() {
            let src: Vec<f64> = f.set_slice(FeatureSetId::IpPow).to_vec();
            for set in FeatureSetId::ALL {
                let range = f.layout.range(set);
                for (offset, idx) in range.enumerate() {
                    f.vector[idx] = src[offset % src.len()];
                }
            }
        }
        let cfg = SfffsConfig { criterion_folds: 5, knn_k: 3, seed: 2, max_sets: 6 };
        let out = sfffs_select_sets(&features, &labels, &cfg).unwrap();
        assert_eq!(out.selected_sets, vec![FeatureSetId::IpPow]);
        assert_eq!(out.trace.len(), 1);
    }

    #[test]
    fn sfffs_combines_complementary_sets() {
        // Two half-signal sets: either alone separates class 1 from {2, 3}
        // or class 3 from {1, 2}; only together do they resolve all three.
        let n_regions = 4;
        let layout = FeatureLayout::new(n_regions, None);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let normal = Normal::new(0.0, 0.6).unwrap();
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for class in ClassLabel::ALL {
            for s in 0..12 {
                let mut vector = vec![0.0; layout.total_len()];
                for v in vector.iter_mut() {
                    *v = normal.sample(&mut rng);
                }
                let a = f64::from(class == ClassLabel::Alzheimer) * 4.0;
                let b = f64::from(class == ClassLabel::Normal) * 4.0;
                for idx in layout.range(FeatureSetId::IpPow) {
                    vector[idx] += a;
                }
                for idx in layout.range(FeatureSetId::Plv) {
                    vector[idx] += b;
                }
                features.push(SubjectFeatures {
                    subject_id: format!("{}_{s}", class.name()),
                    vector,
                    layout: layout.clone(),
                });
                labels.push(class);
            }
        }
        let cfg = SfffsConfig { criterion_folds: 4, knn_k: 3, seed: 3, max_sets: 6 };
        let out = sfffs_select_sets(&features, &labels, &cfg).unwrap();
        assert!(out.selected_sets.contains(&FeatureSetId::IpPow));
        assert!(out.selected_sets.contains(&FeatureSetId::Plv));

        let folds = stratified_folds(&labels, cfg.criterion_folds, cfg.seed).unwrap();
        let both = criterion_accuracy(
            assemble_set_matrix(&features, &[FeatureSetId::IpPow, FeatureSetId::Plv]).view(),
            &labels,
            &folds,
            cfg.knn_k,
        )
        .unwrap();
        for single in [FeatureSetId::IpPow, FeatureSetId::Plv] {
            let alone = criterion_accuracy(
                assemble_set_matrix(&features, &[single]).view(),
                &labels,
                &folds,
                cfg.knn_k,
            )
            .unwrap();
            assert!(both > alone, "{single}: {both} vs {alone}");
        }
    }

    #[test]
    fn sfffs_trace_is_monotone_and_duplicate_free() {
        let (features, labels) = synthetic_features(
            55,
            10,
            &[(FeatureSetId::IpEnt, 1.2), (FeatureSetId::Msc, 0.8)],
        );
        let cfg = SfffsConfig::default();
        let out = sfffs_select_sets(&features, &labels, &cfg).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for step in &out.trace {
            assert!(step.criterion >= prev, "criterion decreased");
            prev = step.criterion;
        }
        assert!(!out.selected_sets.is_empty());
        let mut sorted = out.selected_sets.clone();
        sorted.dedup();
        assert_eq!(sorted.len(), out.selected_sets.len());
    }

    #[test]
    fn significance_filter_keeps_separating_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n_per = 10;
        let mut labels = Vec::new();
        let mut data = Array2::zeros((30, 3));
        for (i, class) in ClassLabel::ALL.iter().enumerate() {
            for s in 0..n_per {
                let row = i * n_per + s;
                labels.push(*class);
                // feature 0: class code plus tiny noise; 1: pure noise; 2: constant
                data[[row, 0]] = class.code() as f64 + 0.01 * rng.random::<f64>();
                data[[row, 1]] = rng.random::<f64>();
                data[[row, 2]] = 5.0;
            }
        }
        let out = significance_filter(data.view(), &labels, 0.05, CombinationRule::Union).unwrap();
        assert!(out.mask[0]);
        assert_eq!(out.degenerate_features, vec![2]);
        assert!(out.pairwise_counts.alz_mci >= 1);
        assert!(out.pairwise_counts.alz_normal >= 1);
        assert!(out.pairwise_counts.mci_normal >= 1);

        // the separating feature survives the strict rule as well
        let strict =
            significance_filter(data.view(), &labels, 0.05, CombinationRule::Intersection).unwrap();
        assert!(strict.mask[0]);
    }

    #[test]
    fn significance_filter_requires_two_per_class() {
        let labels = vec![ClassLabel::Alzheimer, ClassLabel::Mci, ClassLabel::Mci, ClassLabel::Normal, ClassLabel::Normal];
        let data = Array2::zeros((5, 2));
        assert!(matches!(
            significance_filter(data.view(), &labels, 0.05, CombinationRule::Union),
            Err(Error::TooFewSubjects { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn t_test_invariant_under_common_affine_map(
            a in proptest::collection::vec(-10.0f64..10.0, 4..20),
            b in proptest::collection::vec(-10.0f64..10.0, 4..20),
            slope in 0.01f64..50.0,
            intercept in -50.0f64..50.0,
        ) {
            let base = pooled_t_test(&a, &b).unwrap();
            let am: Vec<f64> = a.iter().map(|v| v * slope + intercept).collect();
            let bm: Vec<f64> = b.iter().map(|v| v * slope + intercept).collect();
            let mapped = pooled_t_test(&am, &bm).unwrap();
            prop_assert!((base.p_value - mapped.p_value).abs() < 1e-9);
            prop_assert!((base.t_statistic - mapped.t_statistic).abs() < 1e-6 * base.t_statistic.abs().max(1.0));
        }
    }
}
