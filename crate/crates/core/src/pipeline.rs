//! End-to-end orchestration: split, extract, select, filter, classify,
//! report. Everything downstream of the split sees training data only until
//! prediction time.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;

use crate::classify::{
    compute_metrics, stratified_split, ConfusionMatrix, KnnModel, MetricsReport,
};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::features::{extract_subject_features, FeatureSetId, SubjectFeatures};
use crate::ingest::{load_manifest, load_roi_csv, ClassLabel, SubjectCohort};
use crate::selection::{
    assemble_set_matrix, significance_filter, sfffs_select_sets, PairwiseCounts, SelectionStep,
};

#[derive(Debug, Clone, Serialize)]
pub struct SelectionReport {
    pub skipped: bool,
    pub selected_sets: Vec<FeatureSetId>,
    pub trace: Vec<SelectionStep>,
    pub criterion: Option<f64>,
    pub pairwise_significant_counts: Option<PairwiseCounts>,
    pub degenerate_features: Vec<usize>,
    pub mask_length: usize,
    /// Mask as the list of kept indices into the concatenated selected-set
    /// vector.
    pub feature_mask_indices: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StandardizationReport {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub dropped_features: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PredictionRecord {
    pub subject_id: String,
    pub truth: ClassLabel,
    pub predicted: ClassLabel,
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitReport {
    pub train_subjects: Vec<String>,
    pub test_subjects: Vec<String>,
}

/// The full machine-readable result of one `run` invocation. Everything in
/// here is a deterministic function of config, manifest, and data; timings
/// live in a separate sidecar so reruns stay byte-identical.
#[derive(Debug, Clone, Serialize)]
pub struct EvaluationReport {
    pub version: String,
    pub config: PipelineConfig,
    pub split: SplitReport,
    pub selection: SelectionReport,
    pub standardization: StandardizationReport,
    /// Rows are predicted classes, columns true classes.
    pub confusion_matrix: [[u64; 3]; 3],
    pub metrics: MetricsReport,
    pub predictions: Vec<PredictionRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug)]
pub struct RunArtifacts {
    pub report: EvaluationReport,
    pub timing: Vec<StageTiming>,
}

/// Load every subject in the cohort and extract its feature vector, in
/// manifest order. Subjects run in parallel; per-subject seeds are derived
/// from the subject id, so the schedule cannot change results.
pub fn extract_cohort_features(
    cohort: &SubjectCohort,
    cfg: &PipelineConfig,
) -> Result<Vec<SubjectFeatures>> {
    let filter = cfg.filter_spec();
    let tfp = cfg.tfp_config();
    let entropy = cfg.entropy_config();
    let welch = cfg.welch_config();
    let expected_regions = cohort.region_count;

    cohort
        .records
        .par_iter()
        .map(|record| {
            let mut ts = load_roi_csv(&record.path, cfg.sampling.dt)?;
            ts.subject_id = record.subject_id.clone();
            if let Some(expected) = expected_regions {
                if ts.n_regions() != expected {
                    return Err(Error::InvalidInput(format!(
                        "region count {} differs from cohort's {expected}",
                        ts.n_regions()
                    ))
                    .with_subject(&record.subject_id, None));
                }
            }
            extract_subject_features(&ts, &filter, &tfp, &entropy, &welch, cfg.features.phase_form)
        })
        .collect::<Result<Vec<_>>>()
        .and_then(|features| {
            // all subjects must agree on the layout
            if let Some(first) = features.first() {
                for f in &features {
                    if f.layout.n_regions != first.layout.n_regions {
                        return Err(Error::InvalidInput(format!(
                            "subject {} has {} regions, expected {}",
                            f.subject_id, f.layout.n_regions, first.layout.n_regions
                        )));
                    }
                }
            }
            Ok(features)
        })
}

fn index_subset<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

/// Run the full protocol on a manifest: stratified split, feature
/// extraction, floating set selection and t-test filtering on the training
/// partition only, standardized 5-NN on the held-out subjects.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    manifest_path: &Path,
    skip_selection: bool,
) -> Result<RunArtifacts> {
    cfg.validate()?;
    let mut timing = Vec::new();
    let clock = Instant::now();

    let mut cohort = load_manifest(manifest_path)?;
    if cohort.records.is_empty() {
        return Err(Error::InvalidInput("manifest lists no subjects".into()));
    }
    // Pin the cohort's region count from the first subject before parallel
    // extraction so mismatches are reported against a stable expectation.
    let first = load_roi_csv(&cohort.records[0].path, cfg.sampling.dt)?;
    cohort.region_count = Some(first.n_regions());
    drop(first);
    let labels = cohort.labels();

    let (train_idx, test_idx) = stratified_split(&labels, cfg.split.per_class_test, cfg.split.seed)?;
    timing.push(StageTiming { stage: "split".into(), seconds: clock.elapsed().as_secs_f64() });

    let stage = Instant::now();
    let features = extract_cohort_features(&cohort, cfg)?;
    timing.push(StageTiming { stage: "extract".into(), seconds: stage.elapsed().as_secs_f64() });

    let train_features = index_subset(&features, &train_idx);
    let train_labels = index_subset(&labels, &train_idx);
    let test_features = index_subset(&features, &test_idx);
    let test_labels = index_subset(&labels, &test_idx);

    // Selection: floating search over sets, then per-feature significance
    // filtering, both on the training partition only.
    let stage = Instant::now();
    let (selected_sets, trace, criterion) = if skip_selection {
        (FeatureSetId::ALL.to_vec(), Vec::new(), None)
    } else {
        let outcome = sfffs_select_sets(&train_features, &train_labels, &cfg.sfffs_config())?;
        (outcome.selected_sets, outcome.trace, Some(outcome.criterion))
    };

    let train_matrix = assemble_set_matrix(&train_features, &selected_sets);
    let test_matrix = assemble_set_matrix(&test_features, &selected_sets);
    let mask_length = train_matrix.ncols();

    let (mask_indices, pairwise_counts, degenerate) = if skip_selection {
        ((0..mask_length).collect::<Vec<_>>(), None, Vec::new())
    } else {
        let outcome = significance_filter(
            train_matrix.view(),
            &train_labels,
            cfg.selection.alpha,
            cfg.selection.rule,
        )?;
        (outcome.kept_indices(), Some(outcome.pairwise_counts), outcome.degenerate_features)
    };
    if mask_indices.is_empty() {
        return Err(Error::InvalidInput(
            "significance filtering removed every feature; nothing left to classify".into(),
        ));
    }
    timing.push(StageTiming { stage: "select".into(), seconds: stage.elapsed().as_secs_f64() });

    let stage = Instant::now();
    let take_columns = |m: &Array2<f64>| {
        let mut out = Array2::zeros((m.nrows(), mask_indices.len()));
        for (c, &j) in mask_indices.iter().enumerate() {
            out.column_mut(c).assign(&m.column(j));
        }
        out
    };
    let train_final = take_columns(&train_matrix);
    let test_final = take_columns(&test_matrix);

    let model = KnnModel::fit(train_final.view(), &train_labels, cfg.knn.k)?;
    let predictions: Vec<PredictionRecord> = test_idx
        .iter()
        .enumerate()
        .map(|(row, &subject)| {
            let predicted = model.predict(&test_final.row(row).to_vec())?;
            Ok(PredictionRecord {
                subject_id: cohort.records[subject].subject_id.clone(),
                truth: labels[subject],
                predicted,
            })
        })
        .collect::<Result<_>>()?;

    let confusion = ConfusionMatrix::from_pairs(
        &test_labels,
        &predictions.iter().map(|p| p.predicted).collect::<Vec<_>>(),
    )?;
    let metrics = compute_metrics(&confusion)?;
    timing.push(StageTiming { stage: "classify".into(), seconds: stage.elapsed().as_secs_f64() });

    let report = EvaluationReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        split: SplitReport {
            train_subjects: train_idx
                .iter()
                .map(|&i| cohort.records[i].subject_id.clone())
                .collect(),
            test_subjects: test_idx
                .iter()
                .map(|&i| cohort.records[i].subject_id.clone())
                .collect(),
        },
        selection: SelectionReport {
            skipped: skip_selection,
            selected_sets,
            trace,
            criterion,
            pairwise_significant_counts: pairwise_counts,
            degenerate_features: degenerate,
            mask_length,
            feature_mask_indices: mask_indices,
        },
        standardization: StandardizationReport {
            means: model.standardization().means.clone(),
            stds: model.standardization().stds.clone(),
            dropped_features: model.standardization().dropped.clone(),
        },
        confusion_matrix: *confusion.counts(),
        metrics,
        predictions,
    };
    timing.push(StageTiming { stage: "total".into(), seconds: clock.elapsed().as_secs_f64() });

    Ok(RunArtifacts { report, timing })
}

/// Paths of the files `write_run_artifacts` produces.
#[derive(Debug, Clone)]
pub struct ReportPaths {
    pub report_json: PathBuf,
    pub confusion_csv: PathBuf,
    pub metrics_csv: PathBuf,
    pub timing_json: PathBuf,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), |x| format!("{x}"))
}

/// Serialize the report (JSON), the confusion matrix and metrics (CSV side
/// files), and the timing sidecar into `out_dir`. Only `timing.json` varies
/// between identical reruns.
pub fn write_run_artifacts(artifacts: &RunArtifacts, out_dir: &Path) -> Result<ReportPaths> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let paths = ReportPaths {
        report_json: out_dir.join("report.json"),
        confusion_csv: out_dir.join("confusion.csv"),
        metrics_csv: out_dir.join("metrics.csv"),
        timing_json: out_dir.join("timing.json"),
    };

    let json = serde_json::to_string_pretty(&artifacts.report)
        .map_err(|e| Error::Internal(format!("report serialization: {e}")))?;
    fs::write(&paths.report_json, json.as_bytes()).map_err(|e| Error::io(&paths.report_json, e))?;

    let mut cm = String::new();
    for row in &artifacts.report.confusion_matrix {
        cm.push_str(&format!("{},{},{}\n", row[0], row[1], row[2]));
    }
    fs::write(&paths.confusion_csv, cm).map_err(|e| Error::io(&paths.confusion_csv, e))?;

    let m = &artifacts.report.metrics;
    let mut metrics_csv = String::from("class,accuracy,precision,specificity,sensitivity\n");
    for class in ClassLabel::ALL {
        let c = &m.per_class[class.index()];
        metrics_csv.push_str(&format!(
            "{},{},{},{},{}\n",
            class.name(),
            fmt_opt(c.accuracy),
            fmt_opt(c.precision),
            fmt_opt(c.specificity),
            fmt_opt(c.sensitivity)
        ));
    }
    metrics_csv.push_str(&format!(
        "macro,{},{},{},{}\n",
        fmt_opt(m.macro_avg.accuracy),
        fmt_opt(m.macro_avg.precision),
        fmt_opt(m.macro_avg.specificity),
        fmt_opt(m.macro_avg.sensitivity)
    ));
    metrics_csv.push_str(&format!("raw_accuracy,{},,,\n", m.raw_accuracy));
    fs::write(&paths.metrics_csv, metrics_csv).map_err(|e| Error::io(&paths.metrics_csv, e))?;

    let timing = serde_json::to_string_pretty(&artifacts.timing)
        .map_err(|e| Error::Internal(format!("timing serialization: {e}")))?;
    fs::write(&paths.timing_json, timing).map_err(|e| Error::io(&paths.timing_json, e))?;

    Ok(paths)
}

/// Feature-table emission for the `features` subcommand: one row per subject
/// (id, label, then the flat feature vector), plus an index-map sidecar
/// describing the set boundaries.
pub fn write_feature_table(
    features: &[SubjectFeatures],
    labels: &[ClassLabel],
    out_dir: &Path,
) -> Result<(PathBuf, PathBuf)> {
    if features.is_empty() {
        return Err(Error::InvalidInput("no subjects to write".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let table_path = out_dir.join("features.csv");
    let sidecar_path = out_dir.join("features.index_map.json");

    let layout = &features[0].layout;
    let mut out = String::from("subject_id,label");
    for i in 0..layout.total_len() {
        out.push(',');
        out.push_str(&layout.label(i));
    }
    out.push('\n');
    for (f, label) in features.iter().zip(labels) {
        out.push_str(&f.subject_id);
        out.push(',');
        out.push_str(label.name());
        for v in &f.vector {
            out.push(',');
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    fs::write(&table_path, out).map_err(|e| Error::io(&table_path, e))?;

    #[derive(Serialize)]
    struct SetRange {
        set: FeatureSetId,
        start: usize,
        end: usize,
    }
    #[derive(Serialize)]
    struct IndexMap<'a> {
        n_regions: usize,
        total_len: usize,
        region_names: &'a [String],
        sets: Vec<SetRange>,
    }
    let map = IndexMap {
        n_regions: layout.n_regions,
        total_len: layout.total_len(),
        region_names: &layout.region_names,
        sets: FeatureSetId::ALL
            .into_iter()
            .map(|set| {
                let r = layout.range(set);
                SetRange { set, start: r.start, end: r.end }
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&map)
        .map_err(|e| Error::Internal(format!("index map serialization: {e}")))?;
    fs::write(&sidecar_path, json).map_err(|e| Error::io(&sidecar_path, e))?;

    Ok((table_path, sidecar_path))
}

/// Read a feature table written by `write_feature_table`.
pub fn read_feature_table(table_path: &Path) -> Result<(Vec<SubjectFeatures>, Vec<ClassLabel>)> {
    use crate::features::FeatureLayout;

    let sidecar_path = table_path.with_file_name("features.index_map.json");
    let sidecar_text =
        fs::read_to_string(&sidecar_path).map_err(|e| Error::io(&sidecar_path, e))?;
    let sidecar: serde_json::Value = serde_json::from_str(&sidecar_text)
        .map_err(|e| Error::InvalidInput(format!("index map {}: {e}", sidecar_path.display())))?;
    let n_regions = sidecar["n_regions"]
        .as_u64()
        .ok_or_else(|| Error::InvalidInput("index map lacks n_regions".into()))?
        as usize;
    let region_names: Vec<String> = sidecar["region_names"]
        .as_array()
        .map(|a| a.iter().filter_map(|v| v.as_str().map(String::from)).collect())
        .unwrap_or_default();
    let layout = FeatureLayout::new(
        n_regions,
        if region_names.len() == n_regions { Some(&region_names) } else { None },
    );

    let text = fs::read_to_string(table_path).map_err(|e| Error::io(table_path, e))?;
    let mut lines = text.lines();
    let _header = lines.next().ok_or_else(|| Error::InvalidInput("empty feature table".into()))?;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let subject_id = parts
            .next()
            .ok_or_else(|| Error::InvalidInput(format!("row {}: missing subject id", idx + 2)))?
            .to_string();
        let label_token = parts
            .next()
            .ok_or_else(|| Error::InvalidInput(format!("row {}: missing label", idx + 2)))?;
        let label = ClassLabel::parse_token(label_token).ok_or_else(|| {
            Error::InvalidInput(format!("row {}: unknown label `{label_token}`", idx + 2))
        })?;
        let vector: std::result::Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
        let vector = vector
            .map_err(|_| Error::InvalidInput(format!("row {}: non-numeric feature", idx + 2)))?;
        if vector.len() != layout.total_len() {
            return Err(Error::InvalidInput(format!(
                "row {}: {} features, expected {}",
                idx + 2,
                vector.len(),
                layout.total_len()
            )));
        }
        features.push(SubjectFeatures { subject_id, vector, layout: layout.clone() });
        labels.push(label);
    }
    Ok((features, labels))
}
