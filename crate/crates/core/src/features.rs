//! The six feature sets: instantaneous-phase and envelope power, Shannon
//! entropy, phase-locking values and magnitude-squared coherence, plus the
//! per-subject assembly into one flat vector.

use std::cell::RefCell;
use std::fmt;
use std::ops::Range;

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::RoiTimeSeries;
use crate::seeding::{derive_seed, hash_str};
use crate::sigproc::{tfp_estimate, FilterSpec, TfpConfig};

/// The six feature sets, in their fixed enumeration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeatureSetId {
    #[serde(rename = "IPPow")]
    IpPow,
    #[serde(rename = "IEPow")]
    IePow,
    #[serde(rename = "IPEnt")]
    IpEnt,
    #[serde(rename = "IEEnt")]
    IeEnt,
    #[serde(rename = "PLV")]
    Plv,
    #[serde(rename = "MSC")]
    Msc,
}

impl FeatureSetId {
    pub const ALL: [FeatureSetId; 6] = [
        FeatureSetId::IpPow,
        FeatureSetId::IePow,
        FeatureSetId::IpEnt,
        FeatureSetId::IeEnt,
        FeatureSetId::Plv,
        FeatureSetId::Msc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureSetId::IpPow => "IPPow",
            FeatureSetId::IePow => "IEPow",
            FeatureSetId::IpEnt => "IPEnt",
            FeatureSetId::IeEnt => "IEEnt",
            FeatureSetId::Plv => "PLV",
            FeatureSetId::Msc => "MSC",
        }
    }

    pub fn parse_name(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|id| id.name() == s)
    }
}

impl fmt::Display for FeatureSetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoherencyKind {
    Plv,
    Msc,
}

/// Symmetric N x N coherency matrix with unit diagonal and entries in [0, 1].
#[derive(Debug, Clone)]
pub struct CoherencyMatrix {
    pub kind: CoherencyKind,
    values: Array2<f64>,
}

impl CoherencyMatrix {
    fn from_upper(kind: CoherencyKind, n: usize, upper: &[f64]) -> Self {
        let mut values = Array2::zeros((n, n));
        let mut k = 0;
        for i in 0..n {
            values[[i, i]] = 1.0;
            for j in (i + 1)..n {
                values[[i, j]] = upper[k];
                values[[j, i]] = upper[k];
                k += 1;
            }
        }
        Self { kind, values }
    }

    /// Rebuild the full symmetric matrix from a row-major upper triangle
    /// (the form stored in feature vectors).
    pub fn from_upper_triangle(kind: CoherencyKind, n: usize, upper: &[f64]) -> Result<Self> {
        if upper.len() != n * (n - 1) / 2 {
            return Err(Error::InvalidInput(format!(
                "{} upper-triangle entries for {n} regions",
                upper.len()
            )));
        }
        Ok(Self::from_upper(kind, n, upper))
    }

    pub fn n_regions(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[[i, j]]
    }

    /// Row-major upper triangle (i < j), the vectorization used in feature
    /// vectors.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let n = self.n_regions();
        let mut out = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                out.push(self.values[[i, j]]);
            }
        }
        out
    }
}

/// Sum of squared samples.
pub fn power_feature(seq: &[f64]) -> f64 {
    seq.iter().map(|v| v * v).sum()
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EntropyConfig {
    /// Histogram bin count.
    pub bins: usize,
    /// Logarithm base (2 gives bits).
    pub log_base: f64,
}

impl Default for EntropyConfig {
    fn default() -> Self {
        Self { bins: 16, log_base: 2.0 }
    }
}

impl EntropyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::InvalidConfig("entropy.bins must be at least 2".into()));
        }
        if !(self.log_base > 0.0 && self.log_base != 1.0 && self.log_base.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "entropy.log_base must be positive and not 1, got {}",
                self.log_base
            )));
        }
        Ok(())
    }
}

/// Shannon entropy of the amplitude histogram over `[min, max]` with
/// equal-width bins (the last bin is right-closed so the maximum lands in
/// it). A constant signal has zero range and entropy 0 by definition.
pub fn entropy_feature(seq: &[f64], cfg: &EntropyConfig) -> f64 {
    debug_assert!(cfg.bins >= 2);
    if seq.is_empty() {
        return 0.0;
    }
    let min = seq.iter().copied().fold(f64::INFINITY, f64::min);
    let max = seq.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max <= min {
        return 0.0;
    }
    let width = (max - min) / cfg.bins as f64;
    let mut counts = vec![0usize; cfg.bins];
    for &v in seq {
        let idx = (((v - min) / width) as usize).min(cfg.bins - 1);
        counts[idx] += 1;
    }
    let t = seq.len() as f64;
    let ln_base = cfg.log_base.ln();
    -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / t;
            p * p.ln() / ln_base
        })
        .sum::<f64>()
}

/// Phase locking values for all region pairs: entry (i, j) is the modulus of
/// the time-averaged unit phasor of the phase difference.
pub fn plv_matrix(phases: ArrayView2<'_, f64>) -> Result<CoherencyMatrix> {
    let (n, t) = phases.dim();
    if n < 2 {
        return Err(Error::InvalidInput(format!("plv needs at least 2 signals, got {n}")));
    }
    if t == 0 {
        return Err(Error::InvalidInput("plv needs non-empty signals".into()));
    }

    let phasors: Vec<Vec<Complex64>> = (0..n)
        .map(|i| {
            phases
                .row(i)
                .iter()
                .map(|&p| Complex64::from_polar(1.0, p))
                .collect()
        })
        .collect();

    let mut upper = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for (a, b) in phasors[i].iter().zip(&phasors[j]) {
                acc += b * a.conj();
            }
            upper.push((acc.norm() / t as f64).clamp(0.0, 1.0));
        }
    }
    Ok(CoherencyMatrix::from_upper(CoherencyKind::Plv, n, &upper))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowKind {
    #[serde(rename = "hann")]
    Hann,
    #[serde(rename = "rectangular")]
    Rectangular,
}

/// How per-bin coherence inside the band reduces to one value per pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BandReduction {
    #[serde(rename = "mean")]
    Mean,
    #[serde(rename = "max")]
    Max,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct WelchConfig {
    pub segment_length: usize,
    pub overlap_fraction: f64,
    pub window: WindowKind,
    /// Frequency band (Hz) whose bins are reduced into the scalar entry.
    pub band: (f64, f64),
    pub reduction: BandReduction,
}

impl Default for WelchConfig {
    fn default() -> Self {
        Self {
            segment_length: 64,
            overlap_fraction: 0.5,
            window: WindowKind::Hann,
            band: (0.01, 0.1),
            reduction: BandReduction::Mean,
        }
    }
}

impl WelchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segment_length < 8 {
            return Err(Error::InvalidConfig("welch.segment must be at least 8".into()));
        }
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return Err(Error::InvalidConfig(format!(
                "welch.overlap must lie in [0, 1), got {}",
                self.overlap_fraction
            )));
        }
        if !(self.band.0 >= 0.0 && self.band.1 > self.band.0) {
            return Err(Error::InvalidConfig(format!(
                "welch band must satisfy 0 <= lo < hi, got ({}, {})",
                self.band.0, self.band.1
            )));
        }
        Ok(())
    }

    pub fn hop(&self) -> usize {
        (((self.segment_length as f64) * (1.0 - self.overlap_fraction)).round() as usize).max(1)
    }

    pub fn segment_count(&self, t: usize) -> usize {
        if t < self.segment_length {
            0
        } else {
            (t - self.segment_length) / self.hop() + 1
        }
    }
}

/// Welch magnitude-squared coherence for all region pairs, reduced over the
/// configured band. Requires at least two segments; with a single segment the
/// estimate is identically 1 and carries no information.
pub fn msc_matrix(envelopes: ArrayView2<'_, f64>, fs: f64, cfg: &WelchConfig) -> Result<CoherencyMatrix> {
    cfg.validate()?;
    let (n, t) = envelopes.dim();
    if n < 2 {
        return Err(Error::InvalidInput(format!("msc needs at least 2 signals, got {n}")));
    }
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(Error::InvalidInput(format!("sampling rate must be positive, got {fs}")));
    }
    let seg = cfg.segment_length;
    let k_segs = cfg.segment_count(t);
    if k_segs < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 Welch segments, got {k_segs} (T={t}, segment={seg}, hop={})",
            cfg.hop()
        )));
    }

    let window: Vec<f64> = match cfg.window {
        WindowKind::Hann => (0..seg)
            .map(|i| 0.5 * (1.0 - (std::f64::consts::TAU * i as f64 / seg as f64).cos()))
            .collect(),
        WindowKind::Rectangular => vec![1.0; seg],
    };

    let n_bins = seg / 2 + 1;
    let band_bins: Vec<usize> = (0..n_bins)
        .filter(|&k| {
            let f = k as f64 * fs / seg as f64;
            cfg.band.0 <= f && f <= cfg.band.1
        })
        .collect();
    if band_bins.is_empty() {
        return Err(Error::InvalidInput(format!(
            "band ({}, {}) Hz contains no Welch bins at segment {seg}, fs {fs}",
            cfg.band.0, cfg.band.1
        )));
    }

    // Windowed segment spectra per region: [region][segment][bin].
    let hop = cfg.hop();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(seg);
    let spectra: Vec<Vec<Vec<Complex64>>> = (0..n)
        .map(|i| {
            (0..k_segs)
                .map(|s| {
                    let start = s * hop;
                    let mut buf: Vec<Complex64> = (0..seg)
                        .map(|k| Complex64::new(envelopes[[i, start + k]] * window[k], 0.0))
                        .collect();
                    fft.process(&mut buf);
                    buf.truncate(n_bins);
                    buf
                })
                .collect()
        })
        .collect();

    // Per-region auto-spectra summed over segments.
    let auto: Vec<Vec<f64>> = spectra
        .iter()
        .map(|segs| {
            let mut acc = vec![0.0f64; n_bins];
            for seg_spec in segs {
                for (a, v) in acc.iter_mut().zip(seg_spec) {
                    *a += v.norm_sqr();
                }
            }
            acc
        })
        .collect();

    let mut upper = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut reduced: f64 = 0.0;
            let mut reduced_max: f64 = 0.0;
            for &k in &band_bins {
                let mut cross = Complex64::new(0.0, 0.0);
                for (si, sj) in spectra[i].iter().zip(&spectra[j]) {
                    cross += si[k] * sj[k].conj();
                }
                let denom = auto[i][k] * auto[j][k];
                let coh = if denom > 0.0 {
                    (cross.norm_sqr() / denom).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                reduced += coh;
                reduced_max = reduced_max.max(coh);
            }
            let entry = match cfg.reduction {
                BandReduction::Mean => reduced / band_bins.len() as f64,
                BandReduction::Max => reduced_max,
            };
            upper.push(entry.clamp(0.0, 1.0));
        }
    }
    Ok(CoherencyMatrix::from_upper(CoherencyKind::Msc, n, &upper))
}

/// Which phase sequence feeds the power and entropy features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseForm {
    #[serde(rename = "unwrapped")]
    Unwrapped,
    #[serde(rename = "wrapped")]
    Wrapped,
}

/// Index layout of a subject feature vector: four length-N blocks followed
/// by the two upper-triangle blocks, in `FeatureSetId` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub n_regions: usize,
    pub region_names: Vec<String>,
}

impl FeatureLayout {
    pub fn new(n_regions: usize, region_names: Option<&[String]>) -> Self {
        let region_names = match region_names {
            Some(names) => names.to_vec(),
            None => (1..=n_regions).map(|i| format!("r{i:03}")).collect(),
        };
        Self { n_regions, region_names }
    }

    pub fn pair_count(&self) -> usize {
        self.n_regions * (self.n_regions - 1) / 2
    }

    pub fn total_len(&self) -> usize {
        4 * self.n_regions + 2 * self.pair_count()
    }

    pub fn range(&self, set: FeatureSetId) -> Range<usize> {
        let n = self.n_regions;
        let p = self.pair_count();
        match set {
            FeatureSetId::IpPow => 0..n,
            FeatureSetId::IePow => n..2 * n,
            FeatureSetId::IpEnt => 2 * n..3 * n,
            FeatureSetId::IeEnt => 3 * n..4 * n,
            FeatureSetId::Plv => 4 * n..4 * n + p,
            FeatureSetId::Msc => 4 * n + p..4 * n + 2 * p,
        }
    }

    /// Region pair (i, j) of the k-th upper-triangle entry, row-major.
    pub fn pair_at(&self, mut k: usize) -> (usize, usize) {
        let n = self.n_regions;
        for i in 0..n {
            let row = n - 1 - i;
            if k < row {
                return (i, i + 1 + k);
            }
            k -= row;
        }
        unreachable!("pair index out of range");
    }

    /// Human-readable label of one vector index.
    pub fn label(&self, idx: usize) -> String {
        for set in FeatureSetId::ALL {
            let range = self.range(set);
            if range.contains(&idx) {
                let offset = idx - range.start;
                return match set {
                    FeatureSetId::Plv | FeatureSetId::Msc => {
                        let (i, j) = self.pair_at(offset);
                        format!(
                            "{}_{}_{}",
                            set.name().to_ascii_lowercase(),
                            self.region_names[i],
                            self.region_names[j]
                        )
                    }
                    _ => format!(
                        "{}_{}",
                        set.name().to_ascii_lowercase(),
                        self.region_names[offset]
                    ),
                };
            }
        }
        panic!("feature index {idx} out of range");
    }
}

/// One subject's concatenated feature vector plus its index layout.
#[derive(Debug, Clone)]
pub struct SubjectFeatures {
    pub subject_id: String,
    pub vector: Vec<f64>,
    pub layout: FeatureLayout,
}

impl SubjectFeatures {
    pub fn set_slice(&self, set: FeatureSetId) -> &[f64] {
        &self.vector[self.layout.range(set)]
    }

    /// Reconstruct the subject's PLV or MSC matrix from the stored upper
    /// triangle (for the other four sets there is no matrix form).
    pub fn coherency_matrix(&self, set: FeatureSetId) -> Option<CoherencyMatrix> {
        let kind = match set {
            FeatureSetId::Plv => CoherencyKind::Plv,
            FeatureSetId::Msc => CoherencyKind::Msc,
            _ => return None,
        };
        CoherencyMatrix::from_upper_triangle(kind, self.layout.n_regions, self.set_slice(set)).ok()
    }
}

thread_local! {
    static WELCH_PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Run the estimation chain on every region of one subject and assemble the
/// feature vector. The ensemble seed is derived from the configured seed and
/// the subject id, so per-subject work can run in parallel in any order.
pub fn extract_subject_features(
    ts: &RoiTimeSeries,
    filter: &FilterSpec,
    tfp: &TfpConfig,
    entropy: &EntropyConfig,
    welch: &WelchConfig,
    phase_form: PhaseForm,
) -> Result<SubjectFeatures> {
    entropy.validate().map_err(|e| e.with_subject(&ts.subject_id, None))?;
    let n = ts.n_regions();
    let t = ts.n_timepoints();
    let subject_tfp = TfpConfig {
        seed: derive_seed(tfp.seed, hash_str(&ts.subject_id)),
        ..*tfp
    };

    let mut ip_pow = Vec::with_capacity(n);
    let mut ie_pow = Vec::with_capacity(n);
    let mut ip_ent = Vec::with_capacity(n);
    let mut ie_ent = Vec::with_capacity(n);
    let mut unwrapped = Array2::zeros((n, t));
    let mut envelopes = Array2::zeros((n, t));

    for region in 0..n {
        let signal: Vec<f64> = ts.data.row(region).to_vec();
        let est = tfp_estimate(&signal, filter, &subject_tfp)
            .map_err(|e| e.with_subject(&ts.subject_id, Some(region)))?;
        let ip_seq = match phase_form {
            PhaseForm::Unwrapped => &est.unwrapped_phase,
            PhaseForm::Wrapped => &est.wrapped_phase,
        };
        ip_pow.push(power_feature(ip_seq));
        ie_pow.push(power_feature(&est.envelope));
        ip_ent.push(entropy_feature(ip_seq, entropy));
        ie_ent.push(entropy_feature(&est.envelope, entropy));
        for (dst, src) in unwrapped.row_mut(region).iter_mut().zip(&est.unwrapped_phase) {
            *dst = *src;
        }
        for (dst, src) in envelopes.row_mut(region).iter_mut().zip(&est.envelope) {
            *dst = *src;
        }
    }

    let plv = plv_matrix(unwrapped.view()).map_err(|e| e.with_subject(&ts.subject_id, None))?;
    let msc = msc_matrix(envelopes.view(), ts.fs(), welch)
        .map_err(|e| e.with_subject(&ts.subject_id, None))?;

    let layout = FeatureLayout::new(n, ts.region_names.as_deref());
    let mut vector = Vec::with_capacity(layout.total_len());
    vector.extend_from_slice(&ip_pow);
    vector.extend_from_slice(&ie_pow);
    vector.extend_from_slice(&ip_ent);
    vector.extend_from_slice(&ie_ent);
    vector.extend(plv.upper_triangle());
    vector.extend(msc.upper_triangle());
    debug_assert_eq!(vector.len(), layout.total_len());

    Ok(SubjectFeatures {
        subject_id: ts.subject_id.clone(),
        vector,
        layout,
    })
}

/// Write a coherency matrix as a full symmetric N x N CSV.
pub fn write_coherency_csv(matrix: &CoherencyMatrix, path: &std::path::Path) -> Result<()> {
    use std::io::Write;
    let n = matrix.n_regions();
    let mut out = String::new();
    for i in 0..n {
        for j in 0..n {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format!("{}", matrix.get(i, j)));
        }
        out.push('\n');
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
