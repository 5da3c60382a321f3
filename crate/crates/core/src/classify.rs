//! Stratified splitting, feature standardization, K-nearest-neighbor
//! classification, the confusion matrix, and the four performance
//! indicators.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::ClassLabel;
use crate::seeding::derive_seed;

/// Pick `per_class_test` test subjects per class uniformly without
/// replacement from a seeded stream; the remainder is training. Returns
/// (train indices, test indices), each sorted ascending.
pub fn stratified_split(
    labels: &[ClassLabel],
    per_class_test: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in ClassLabel::ALL {
        let mut members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == class)
            .map(|(i, _)| i)
            .collect();
        if per_class_test > 0 && members.len() <= per_class_test {
            return Err(Error::TooFewSubjects {
                class: class.name(),
                need: per_class_test + 1,
                got: members.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, class.code() as u64));
        members.shuffle(&mut rng);
        test.extend_from_slice(&members[..per_class_test]);
        train.extend_from_slice(&members[per_class_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Per-feature z-scoring parameters fitted on training data. Features that
/// are exactly constant across the training set are dropped and recorded.
#[derive(Debug, Clone, Serialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Indices of retained features, ascending.
    pub kept: Vec<usize>,
    /// Indices of dropped zero-variance features, ascending.
    pub dropped: Vec<usize>,
}

/// Fit means and (population) standard deviations per feature.
pub fn standardize_fit(train: ArrayView2<'_, f64>) -> Result<Standardization> {
    let (rows, cols) = train.dim();
    if rows < 2 {
        return Err(Error::InvalidInput(format!(
            "standardization needs at least 2 training vectors, got {rows}"
        )));
    }
    let mut means = Vec::with_capacity(cols);
    let mut stds = Vec::with_capacity(cols);
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for j in 0..cols {
        let col = train.column(j);
        let first = col[0];
        let constant = col.iter().all(|v| *v == first);
        let mean = col.sum() / rows as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / rows as f64;
        let std = var.sqrt();
        means.push(mean);
        stds.push(std);
        if constant || std == 0.0 {
            dropped.push(j);
        } else {
            kept.push(j);
        }
    }
    Ok(Standardization { means, stds, kept, dropped })
}

impl Standardization {
    /// Original feature dimension the parameters were fitted on.
    pub fn input_len(&self) -> usize {
        self.means.len()
    }

    /// Z-score a raw vector, returning only the retained features.
    pub fn apply(&self, sample: &[f64]) -> Result<Vec<f64>> {
        if sample.len() != self.input_len() {
            return Err(Error::InvalidInput(format!(
                "sample has {} features, standardization was fitted on {}",
                sample.len(),
                self.input_len()
            )));
        }
        Ok(self
            .kept
            .iter()
            .map(|&j| (sample[j] - self.means[j]) / self.stds[j])
            .collect())
    }
}

/// K-nearest-neighbor model over standardized training vectors.
#[derive(Debug, Clone)]
pub struct KnnModel {
    train: Array2<f64>,
    labels: Vec<ClassLabel>,
    k: usize,
    standardization: Standardization,
}

impl KnnModel {
    /// Fit standardization on the raw training matrix and store the z-scored
    /// vectors. `k` may not exceed the number of training vectors.
    pub fn fit(train_raw: ArrayView2<'_, f64>, labels: &[ClassLabel], k: usize) -> Result<Self> {
        let rows = train_raw.nrows();
        if labels.len() != rows {
            return Err(Error::InvalidInput(format!(
                "{} labels for {rows} training vectors",
                labels.len()
            )));
        }
        if k < 1 || k > rows {
            return Err(Error::InvalidInput(format!(
                "k = {k} must lie in 1..={rows}"
            )));
        }
        let standardization = standardize_fit(train_raw)?;
        let mut train = Array2::zeros((rows, standardization.kept.len()));
        for (i, mut row) in train.rows_mut().into_iter().enumerate() {
            let z = standardization.apply(&train_raw.row(i).to_vec())?;
            for (dst, src) in row.iter_mut().zip(&z) {
                *dst = *src;
            }
        }
        Ok(Self {
            train,
            labels: labels.to_vec(),
            k,
            standardization,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn standardization(&self) -> &Standardization {
        &self.standardization
    }

    /// Classify one raw sample: majority label among the k nearest training
    /// vectors (Euclidean distance on the standardized features). A vote tie
    /// goes to the tied class with the smallest mean neighbor distance, then
    /// to the lowest numeric label; a distance tie at the k-th rank goes to
    /// the earlier training vector.
    pub fn predict(&self, sample_raw: &[f64]) -> Result<ClassLabel> {
        if let Some(i) = sample_raw.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite feature at index {i}"
            )));
        }
        let z = self.standardization.apply(sample_raw)?;
        let mut dists: Vec<(f64, usize)> = self
            .train
            .rows()
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                let d2: f64 = row
                    .iter()
                    .zip(&z)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (d2.sqrt(), i)
            })
            .collect();
        dists.sort_unstable_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .expect("distances are finite")
                .then(a.1.cmp(&b.1))
        });
        let neighbors = &dists[..self.k];

        let mut votes = [0usize; 3];
        for &(_, idx) in neighbors {
            votes[self.labels[idx].index()] += 1;
        }
        let top = *votes.iter().max().expect("three classes");
        let tied: Vec<ClassLabel> = ClassLabel::ALL
            .into_iter()
            .filter(|c| votes[c.index()] == top)
            .collect();
        if tied.len() == 1 {
            return Ok(tied[0]);
        }
        // Mean neighbor distance per tied class; ClassLabel::ALL is in
        // ascending numeric order, so a strict `<` also settles exact ties
        // in favor of the lower label.
        let mut best = tied[0];
        let mut best_mean = f64::INFINITY;
        for class in tied {
            let (sum, count) = neighbors
                .iter()
                .filter(|(_, idx)| self.labels[*idx] == class)
                .fold((0.0, 0usize), |(s, c), (d, _)| (s + d, c + 1));
            let mean = sum / count as f64;
            if mean < best_mean {
                best_mean = mean;
                best = class;
            }
        }
        Ok(best)
    }
}

/// 3 x 3 confusion counts; rows are predicted classes, columns true classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; 3]; 3]) -> Self {
        Self { counts }
    }

    pub fn from_pairs(truth: &[ClassLabel], predicted: &[ClassLabel]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::InvalidInput(format!(
                "{} truth labels vs {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut counts = [[0u64; 3]; 3];
        for (t, p) in truth.iter().zip(predicted) {
            counts[p.index()][t.index()] += 1;
        }
        Ok(Self { counts })
    }

    pub fn counts(&self) -> &[[u64; 3]; 3] {
        &self.counts
    }

    pub fn get(&self, predicted: ClassLabel, truth: ClassLabel) -> u64 {
        self.counts[predicted.index()][truth.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    /// Per-class column sums (true-label counts).
    pub fn column_sums(&self) -> [u64; 3] {
        let mut sums = [0u64; 3];
        for row in &self.counts {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        sums
    }
}

/// One-vs-rest metrics for a single class. `None` marks an undefined value
/// (zero denominator), excluded from macro averages.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ClassMetrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub specificity: Option<f64>,
    pub sensitivity: Option<f64>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MacroMetrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub specificity: Option<f64>,
    pub sensitivity: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    /// Indexed by `ClassLabel::index()`.
    pub per_class: [ClassMetrics; 3],
    /// Unweighted means over classes with defined values.
    pub macro_avg: MacroMetrics,
    /// trace / total.
    pub raw_accuracy: f64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    if den == 0 {
        None
    } else {
        Some(num as f64 / den as f64)
    }
}

fn macro_mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// One-vs-rest accuracy, precision, specificity and sensitivity per class,
/// their unweighted macro means, and the raw accuracy.
pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::InvalidInput("empty confusion matrix".into()));
    }
    let per_class: [ClassMetrics; 3] = ClassLabel::ALL.map(|class| {
        let c = class.index();
        let tp = cm.counts[c][c];
        let fp: u64 = (0..3).filter(|&t| t != c).map(|t| cm.counts[c][t]).sum();
        let fn_: u64 = (0..3).filter(|&p| p != c).map(|p| cm.counts[p][c]).sum();
        let tn = total - tp - fp - fn_;
        ClassMetrics {
            accuracy: ratio(tp + tn, total),
            precision: ratio(tp, tp + fp),
            specificity: ratio(tn, tn + fp),
            sensitivity: ratio(tp, tp + fn_),
        }
    });
    let macro_avg = MacroMetrics {
        accuracy: macro_mean(per_class.iter().map(|m| m.accuracy)),
        precision: macro_mean(per_class.iter().map(|m| m.precision)),
        specificity: macro_mean(per_class.iter().map(|m| m.specificity)),
        sensitivity: macro_mean(per_class.iter().map(|m| m.sensitivity)),
    };
    Ok(MetricsReport {
        per_class,
        macro_avg,
        raw_accuracy: cm.trace() as f64 / total as f64,
    })
}
