//! Python bindings for the phasefeat pipeline: signal decomposition,
//! coherency matrices, the statistical tests, the synthetic cohort
//! generator, and the full evaluation run.
//!
//! Build with `cargo build -p phasefeat-py --release`; the resulting
//! `libphasefeat_py.so` imports as the module `phasefeat_py` once renamed
//! (see `python/smoke_test.py`).

use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use phasefeat::classify::{compute_metrics, ConfusionMatrix};
use phasefeat::config::PipelineConfig;
use phasefeat::error::Error;
use phasefeat::features::{
    entropy_feature, msc_matrix, plv_matrix, power_feature, EntropyConfig, WelchConfig, WindowKind,
};
use phasefeat::ingest::ClassLabel;
use phasefeat::pipeline::{run_pipeline, write_run_artifacts};
use phasefeat::sigproc::{
    analytic_signal, instantaneous_envelope, instantaneous_phase, tfp_estimate, unwrap_phase,
    FilterSpec, TfpConfig,
};

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn matrix_rows(m: &phasefeat::features::CoherencyMatrix) -> Vec<Vec<f64>> {
    let n = m.n_regions();
    (0..n).map(|i| (0..n).map(|j| m.get(i, j)).collect()).collect()
}

fn to_array2(signals: Vec<Vec<f64>>, what: &str) -> PyResult<ndarray::Array2<f64>> {
    let n = signals.len();
    let t = signals.first().map_or(0, Vec::len);
    if n < 2 || t == 0 {
        return Err(PyValueError::new_err(format!(
            "{what} needs at least 2 non-empty signals"
        )));
    }
    if signals.iter().any(|s| s.len() != t) {
        return Err(PyValueError::new_err(format!("{what} signals must share one length")));
    }
    let mut data = ndarray::Array2::zeros((n, t));
    for (i, row) in signals.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            data[[i, j]] = *v;
        }
    }
    Ok(data)
}

/// Analytic decomposition of one real signal without filtering:
/// returns (envelope, wrapped_phase, unwrapped_phase).
#[pyfunction]
fn analytic_decompose(x: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let z = analytic_signal(&x).map_err(err)?;
    let (wrapped, _) = instantaneous_phase(&z);
    let unwrapped = unwrap_phase(&wrapped);
    Ok((instantaneous_envelope(&z), wrapped, unwrapped))
}

/// Band-pass + dithered ensemble estimate of instantaneous phase and
/// envelope: returns (envelope, wrapped_phase, unwrapped_phase).
#[pyfunction]
#[pyo3(signature = (x, fs, f_lo=0.01, f_hi=0.1, order=4, ensembles=64, dither=0.01, seed=42))]
#[allow(clippy::too_many_arguments)]
fn tfp_decompose(
    x: Vec<f64>,
    fs: f64,
    f_lo: f64,
    f_hi: f64,
    order: usize,
    ensembles: usize,
    dither: f64,
    seed: u64,
) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let spec = FilterSpec { f_lo, f_hi, order, fs };
    let cfg = TfpConfig { ensembles, dither, seed, input_dither_snr_db: None };
    let est = tfp_estimate(&x, &spec, &cfg).map_err(err)?;
    Ok((est.envelope, est.wrapped_phase, est.unwrapped_phase))
}

/// Phase-locking-value matrix of N phase signals (rows).
#[pyfunction]
fn plv(phases: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let data = to_array2(phases, "plv")?;
    Ok(matrix_rows(&plv_matrix(data.view()).map_err(err)?))
}

/// Welch magnitude-squared-coherence matrix of N envelope signals (rows),
/// reduced over the band (band_lo, band_hi) Hz.
#[pyfunction]
#[pyo3(signature = (envelopes, fs, segment=64, overlap=0.5, band_lo=0.01, band_hi=0.1, window="hann"))]
fn msc(
    envelopes: Vec<Vec<f64>>,
    fs: f64,
    segment: usize,
    overlap: f64,
    band_lo: f64,
    band_hi: f64,
    window: &str,
) -> PyResult<Vec<Vec<f64>>> {
    let data = to_array2(envelopes, "msc")?;
    let window = match window {
        "hann" => WindowKind::Hann,
        "rectangular" => WindowKind::Rectangular,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown window `{other}` (expected hann or rectangular)"
            )))
        }
    };
    let cfg = WelchConfig {
        segment_length: segment,
        overlap_fraction: overlap,
        window,
        band: (band_lo, band_hi),
        ..Default::default()
    };
    Ok(matrix_rows(&msc_matrix(data.view(), fs, &cfg).map_err(err)?))
}

/// Sum of squared samples.
#[pyfunction]
fn power(seq: Vec<f64>) -> f64 {
    power_feature(&seq)
}

/// Histogram Shannon entropy over [min, max] with equal-width bins.
#[pyfunction]
#[pyo3(signature = (seq, bins=16, log_base=2.0))]
fn entropy(seq: Vec<f64>, bins: usize, log_base: f64) -> PyResult<f64> {
    let cfg = EntropyConfig { bins, log_base };
    cfg.validate().map_err(err)?;
    Ok(entropy_feature(&seq, &cfg))
}

/// Student's t cumulative distribution function.
#[pyfunction]
fn t_cdf(t: f64, df: usize) -> PyResult<f64> {
    if df < 1 {
        return Err(PyValueError::new_err("df must be at least 1"));
    }
    Ok(phasefeat::selection::t_cdf(t, df))
}

/// Pooled-variance two-sample t-test; returns (t, df, p, degenerate).
#[pyfunction]
fn pooled_t_test(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, usize, f64, bool)> {
    let r = phasefeat::selection::pooled_t_test(&a, &b).map_err(err)?;
    Ok((r.t_statistic, r.degrees_of_freedom, r.p_value, r.degenerate))
}

fn metrics_dict<'py>(
    py: Python<'py>,
    report: &phasefeat::classify::MetricsReport,
) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    let per_class = PyDict::new(py);
    for class in ClassLabel::ALL {
        let m = &report.per_class[class.index()];
        let d = PyDict::new(py);
        d.set_item("accuracy", m.accuracy)?;
        d.set_item("precision", m.precision)?;
        d.set_item("specificity", m.specificity)?;
        d.set_item("sensitivity", m.sensitivity)?;
        per_class.set_item(class.name(), d)?;
    }
    out.set_item("per_class", per_class)?;
    let macro_avg = PyDict::new(py);
    macro_avg.set_item("accuracy", report.macro_avg.accuracy)?;
    macro_avg.set_item("precision", report.macro_avg.precision)?;
    macro_avg.set_item("specificity", report.macro_avg.specificity)?;
    macro_avg.set_item("sensitivity", report.macro_avg.sensitivity)?;
    out.set_item("macro", macro_avg)?;
    out.set_item("raw_accuracy", report.raw_accuracy)?;
    Ok(out)
}

/// Performance indicators of a 3x3 confusion matrix (rows predicted,
/// columns true): per-class and macro accuracy/precision/specificity/
/// sensitivity plus raw accuracy.
#[pyfunction]
fn metrics_from_confusion(py: Python<'_>, counts: [[u64; 3]; 3]) -> PyResult<Py<PyDict>> {
    let cm = ConfusionMatrix::from_counts(counts);
    let report = compute_metrics(&cm).map_err(err)?;
    Ok(metrics_dict(py, &report)?.unbind())
}

/// Generate a synthetic labeled cohort on disk; returns the manifest path.
#[pyfunction]
#[pyo3(signature = (preset, out_dir, seed=None, regions=None, timepoints=None, subjects_per_class=None))]
fn generate_cohort(
    preset: &str,
    out_dir: PathBuf,
    seed: Option<u64>,
    regions: Option<usize>,
    timepoints: Option<usize>,
    subjects_per_class: Option<usize>,
) -> PyResult<String> {
    let mut cfg = phasefeat::synth::preset(preset).map_err(err)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = regions {
        cfg.regions = n;
    }
    if let Some(t) = timepoints {
        cfg.timepoints = t;
    }
    if let Some(s) = subjects_per_class {
        cfg.subjects_per_class = s;
    }
    phasefeat::synth::generate_cohort(&cfg, &out_dir).map_err(err)?;
    Ok(out_dir.join("manifest.csv").to_string_lossy().into_owned())
}

/// Full pipeline on a manifest; writes report files into `out_dir` and
/// returns a summary dict.
#[pyfunction]
#[pyo3(signature = (manifest, out_dir, config_path=None, skip_selection=false, seed=None))]
fn run(
    py: Python<'_>,
    manifest: PathBuf,
    out_dir: PathBuf,
    config_path: Option<PathBuf>,
    skip_selection: bool,
    seed: Option<u64>,
) -> PyResult<Py<PyDict>> {
    let mut cfg = match config_path {
        Some(p) => PipelineConfig::load(Path::new(&p)).map_err(err)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.apply_master_seed(s);
    }
    let artifacts = run_pipeline(&cfg, &manifest, skip_selection).map_err(err)?;
    let paths = write_run_artifacts(&artifacts, &out_dir).map_err(err)?;

    let out = PyDict::new(py);
    out.set_item("report_path", paths.report_json.to_string_lossy().into_owned())?;
    out.set_item(
        "selected_sets",
        artifacts
            .report
            .selection
            .selected_sets
            .iter()
            .map(|s| s.name())
            .collect::<Vec<_>>(),
    )?;
    out.set_item("metrics", metrics_dict(py, &artifacts.report.metrics)?)?;
    out.set_item(
        "predictions",
        artifacts
            .report
            .predictions
            .iter()
            .map(|p| (p.subject_id.clone(), p.truth.name(), p.predicted.name()))
            .collect::<Vec<_>>(),
    )?;
    Ok(out.unbind())
}

#[pymodule]
fn phasefeat_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(analytic_decompose, m)?)?;
    m.add_function(wrap_pyfunction!(tfp_decompose, m)?)?;
    m.add_function(wrap_pyfunction!(plv, m)?)?;
    m.add_function(wrap_pyfunction!(msc, m)?)?;
    m.add_function(wrap_pyfunction!(power, m)?)?;
    m.add_function(wrap_pyfunction!(entropy, m)?)?;
    m.add_function(wrap_pyfunction!(t_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(pooled_t_test, m)?)?;
    m.add_function(wrap_pyfunction!(metrics_from_confusion, m)?)?;
    m.add_function(wrap_pyfunction!(generate_cohort, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
