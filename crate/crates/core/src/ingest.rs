//! Cohort manifests and ROI time-series CSV files.
//!
//! The on-disk formats are deliberately minimal: a manifest is
//! `subject_id,label,path` with one row per subject, and an ROI file is a
//! plain numeric CSV with timepoints as rows and regions as columns
//! (optional header row of region names). Paths in a manifest are resolved
//! relative to the manifest's directory.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diagnostic class. The numeric codes 1/2/3 and the short names are a fixed
/// bidirectional mapping; manifests may use either form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClassLabel {
    #[serde(rename = "ALZ")]
    Alzheimer,
    #[serde(rename = "MCI")]
    Mci,
    #[serde(rename = "NORMAL")]
    Normal,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 3] = [ClassLabel::Alzheimer, ClassLabel::Mci, ClassLabel::Normal];

    pub fn code(self) -> u8 {
        match self {
            ClassLabel::Alzheimer => 1,
            ClassLabel::Mci => 2,
            ClassLabel::Normal => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(ClassLabel::Alzheimer),
            2 => Some(ClassLabel::Mci),
            3 => Some(ClassLabel::Normal),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Alzheimer => "ALZ",
            ClassLabel::Mci => "MCI",
            ClassLabel::Normal => "NORMAL",
        }
    }

    /// Zero-based index used for fixed-size per-class arrays.
    pub fn index(self) -> usize {
        self.code() as usize - 1
    }

    /// Parse a manifest token: numeric code or name, case-insensitive.
    pub fn parse_token(token: &str) -> Option<Self> {
        let t = token.trim();
        if let Ok(code) = t.parse::<u8>() {
            return Self::from_code(code);
        }
        match t.to_ascii_uppercase().as_str() {
            "ALZ" => Some(ClassLabel::Alzheimer),
            "MCI" => Some(ClassLabel::Mci),
            "NORMAL" => Some(ClassLabel::Normal),
            _ => None,
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-subject matrix of region signals, stored region-major (N x T).
#[derive(Debug, Clone)]
pub struct RoiTimeSeries {
    pub subject_id: String,
    /// N regions x T timepoints.
    pub data: Array2<f64>,
    /// Sampling interval in seconds.
    pub dt: f64,
    pub region_names: Option<Vec<String>>,
}

pub const MIN_REGIONS: usize = 2;
pub const MIN_TIMEPOINTS: usize = 16;

impl RoiTimeSeries {
    pub fn new(
        subject_id: impl Into<String>,
        data: Array2<f64>,
        dt: f64,
        region_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let (n, t) = data.dim();
        if n < MIN_REGIONS {
            return Err(Error::InvalidInput(format!(
                "need at least {MIN_REGIONS} regions, got {n}"
            )));
        }
        if t < MIN_TIMEPOINTS {
            return Err(Error::InvalidInput(format!(
                "need at least {MIN_TIMEPOINTS} timepoints, got {t}"
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
        }
        if let Some(names) = &region_names {
            if names.len() != n {
                return Err(Error::InvalidInput(format!(
                    "{} region names for {n} regions",
                    names.len()
                )));
            }
        }
        if let Some((i, j)) = data.indexed_iter().find(|(_, v)| !v.is_finite()).map(|(ix, _)| ix) {
            return Err(Error::InvalidInput(format!(
                "non-finite value at region {i}, timepoint {j}"
            )));
        }
        Ok(Self {
            subject_id: subject_id.into(),
            data,
            dt,
            region_names,
        })
    }

    pub fn n_regions(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_timepoints(&self) -> usize {
        self.data.ncols()
    }

    /// Sampling rate in Hz.
    pub fn fs(&self) -> f64 {
        1.0 / self.dt
    }
}

/// One manifest row.
#[derive(Debug, Clone, Serialize)]
pub struct CohortRecord {
    pub subject_id: String,
    pub label: ClassLabel,
    /// Resolved (manifest-relative) path of the subject's ROI CSV.
    pub path: PathBuf,
}

/// Labeled collection of subjects.
#[derive(Debug, Clone)]
pub struct SubjectCohort {
    pub records: Vec<CohortRecord>,
    /// Region count, filled in once the first file is loaded.
    pub region_count: Option<usize>,
}

impl SubjectCohort {
    pub fn labels(&self) -> Vec<ClassLabel> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn class_counts(&self) -> BTreeMap<ClassLabel, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            *counts.entry(r.label).or_insert(0) += 1;
        }
        counts
    }
}

/// Parse a cohort manifest. Row numbers in errors are 1-based and include
/// the header row.
pub fn load_manifest(path: &Path) -> Result<SubjectCohort> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut lines = text.lines().enumerate();

    let (_, header) = lines.next().ok_or_else(|| Error::Manifest {
        path: path.to_path_buf(),
        row: 1,
        message: "empty file, expected header `subject_id,label,path`".into(),
    })?;
    if !header.trim().eq_ignore_ascii_case("subject_id,label,path") {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            row: 1,
            message: format!("expected header `subject_id,label,path`, got `{}`", header.trim()),
        });
    }

    let mut records = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, line) in lines {
        let row = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, ',');
        let subject_id = parts.next().unwrap_or("").trim().to_string();
        let label_token = parts.next().map(str::trim);
        let rel_path = parts.next().map(str::trim);
        let (label_token, rel_path) = match (label_token, rel_path) {
            (Some(l), Some(p)) if !subject_id.is_empty() && !p.is_empty() => (l, p),
            _ => {
                return Err(Error::Manifest {
                    path: path.to_path_buf(),
                    row,
                    message: format!("malformed row `{line}`, expected `subject_id,label,path`"),
                })
            }
        };
        let label = ClassLabel::parse_token(label_token).ok_or_else(|| Error::Manifest {
            path: path.to_path_buf(),
            row,
            message: format!(
                "unknown label token `{label_token}` (expected 1/2/3 or ALZ/MCI/NORMAL)"
            ),
        })?;
        if let Some(first_row) = seen.insert(subject_id.clone(), row) {
            return Err(Error::Manifest {
                path: path.to_path_buf(),
                row,
                message: format!("duplicate subject_id `{subject_id}` (rows {first_row} and {row})"),
            });
        }
        records.push(CohortRecord {
            subject_id,
            label,
            path: base.join(rel_path),
        });
    }

    Ok(SubjectCohort {
        records,
        region_count: None,
    })
}

/// Load one ROI CSV: T rows x N columns, optional header row of region names
/// (detected by a non-numeric first row). The returned matrix is region-major
/// (N x T). The subject id defaults to the file stem.
pub fn load_roi_csv(path: &Path, dt: f64) -> Result<RoiTimeSeries> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |message: String| Error::RoiCsv {
        path: path.to_path_buf(),
        message,
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut region_names: Option<Vec<String>> = None;
    let mut n_cols = 0usize;
    for (idx, line) in text.lines().enumerate() {
        let row = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f64>, _> =
            fields.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Err(_) if rows.is_empty() && region_names.is_none() => {
                region_names = Some(fields.iter().map(|s| s.to_string()).collect());
                n_cols = fields.len();
            }
            Err(_) => {
                let col = fields
                    .iter()
                    .position(|f| f.parse::<f64>().is_err())
                    .unwrap_or(0)
                    + 1;
                return Err(err(format!("row {row}, column {col}: not a number")));
            }
            Ok(values) => {
                if rows.is_empty() && region_names.is_none() {
                    n_cols = values.len();
                } else if values.len() != n_cols {
                    return Err(err(format!(
                        "row {row}: ragged row with {} fields, expected {n_cols}",
                        values.len()
                    )));
                }
                if let Some(col) = values.iter().position(|v| !v.is_finite()) {
                    return Err(err(format!(
                        "row {row}, column {}: non-finite value",
                        col + 1
                    )));
                }
                rows.push(values);
            }
        }
    }

    let t = rows.len();
    let n = n_cols;
    if n < MIN_REGIONS {
        return Err(err(format!("{n} regions, need at least {MIN_REGIONS}")));
    }
    if t < MIN_TIMEPOINTS {
        return Err(err(format!("{t} timepoints, need at least {MIN_TIMEPOINTS}")));
    }

    // Transpose into region-major storage.
    let mut data = Array2::zeros((n, t));
    for (j, row) in rows.iter().enumerate() {
        for (i, v) in row.iter().enumerate() {
            data[[i, j]] = *v;
        }
    }

    let subject_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "unknown".into());
    RoiTimeSeries::new(subject_id, data, dt, region_names).map_err(|e| match e {
        Error::InvalidInput(m) => err(m),
        other => other,
    })
}

/// Write an ROI CSV in the layout `load_roi_csv` expects. Values are printed
/// with the shortest representation that round-trips, so write-then-load
/// reproduces the matrix bit-exactly.
pub fn write_roi_csv(ts: &RoiTimeSeries, path: &Path) -> Result<()> {
    let mut out = String::new();
    if let Some(names) = &ts.region_names {
        out.push_str(&names.join(","));
        out.push('\n');
    }
    let (n, t) = ts.data.dim();
    for j in 0..t {
        for i in 0..n {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&format!("{}", ts.data[[i, j]]));
        }
        out.push('\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// One validation finding; `subject_id` is absent for cohort-level findings.
#[derive(Debug, Clone, Serialize)]
pub struct Finding {
    pub subject_id: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct ValidationReport {
    pub per_class_counts: BTreeMap<String, usize>,
    pub region_count: Option<usize>,
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }
}

/// Check a cohort without modifying it: per-class counts, readability of
/// every file, and region-count agreement (against `cohort.region_count` if
/// set, else the first readable file).
pub fn validate_cohort(cohort: &SubjectCohort, dt: f64) -> ValidationReport {
    let mut report = ValidationReport::default();
    for label in ClassLabel::ALL {
        report.per_class_counts.insert(label.name().to_string(), 0);
    }
    if cohort.records.is_empty() {
        report.findings.push(Finding {
            subject_id: None,
            message: "no subjects".into(),
        });
        return report;
    }
    let mut expected_regions = cohort.region_count;
    for record in &cohort.records {
        *report
            .per_class_counts
            .get_mut(record.label.name())
            .expect("all classes preinitialized") += 1;
        match load_roi_csv(&record.path, dt) {
            Ok(ts) => {
                let n = ts.n_regions();
                match expected_regions {
                    None => expected_regions = Some(n),
                    Some(expected) if expected != n => report.findings.push(Finding {
                        subject_id: Some(record.subject_id.clone()),
                        message: format!("region count {n} differs from expected {expected}"),
                    }),
                    _ => {}
                }
            }
            Err(e) => report.findings.push(Finding {
                subject_id: Some(record.subject_id.clone()),
                message: format!("unreadable: {e}"),
            }),
        }
    }
    report.region_count = expected_regions;
    report
}
