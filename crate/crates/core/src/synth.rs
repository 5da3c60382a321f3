//! Synthetic labeled ROI cohorts with controllable class-dependent phase
//! coupling, amplitude, and noise. Stands in for restricted clinical data as
//! the pipeline's reproducible test bed.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::{write_roi_csv, ClassLabel, CohortRecord, RoiTimeSeries, SubjectCohort};
use crate::seeding::derive_seed2;

/// Relative amplitudes of the three sinusoids per region; the first is the
/// dominant component that carries the coupling. The minors are kept small
/// so the measured phase of a coupled pair tracks the shared component.
const COMPONENT_AMPS: [f64; 3] = [1.0, 0.1, 0.05];
const FREQ_RANGE: (f64, f64) = (0.01, 0.1);

/// Per-class generation knobs.
#[derive(Debug, Clone, Serialize)]
pub struct ClassSynthParams {
    /// Directed coupled pairs (source, target): the target region's dominant
    /// sinusoid copies the source's frequency and phase track.
    pub coupled_pairs: Vec<(usize, usize)>,
    /// Phase-jitter concentration of the coupling; higher locks tighter
    /// (infinite = no jitter, 0 = uniform jitter).
    pub coupling_kappa: f64,
    /// Overall amplitude scale.
    pub amplitude: f64,
    /// White-noise standard deviation.
    pub noise_std: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthConfig {
    pub regions: usize,
    pub timepoints: usize,
    pub dt: f64,
    pub subjects_per_class: usize,
    pub seed: u64,
    /// Indexed by `ClassLabel::index()`.
    pub classes: [ClassSynthParams; 3],
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.regions < 2 {
            return Err(Error::InvalidConfig("synth.regions must be at least 2".into()));
        }
        if self.timepoints < 32 {
            return Err(Error::InvalidConfig("synth.timepoints must be at least 32".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidConfig("synth dt must be positive".into()));
        }
        if self.subjects_per_class < 1 {
            return Err(Error::InvalidConfig("synth.subjects_per_class must be at least 1".into()));
        }
        for (ci, params) in self.classes.iter().enumerate() {
            for &(a, b) in &params.coupled_pairs {
                if a >= self.regions || b >= self.regions || a == b {
                    return Err(Error::InvalidConfig(format!(
                        "class {} coupled pair ({a}, {b}) out of range for {} regions",
                        ci + 1,
                        self.regions
                    )));
                }
            }
            if params.coupling_kappa < 0.0 {
                return Err(Error::InvalidConfig("coupling kappa must be nonnegative".into()));
            }
            if !params.amplitude.is_finite() || params.amplitude <= 0.0 {
                return Err(Error::InvalidConfig("amplitude must be positive".into()));
            }
            if params.noise_std < 0.0 {
                return Err(Error::InvalidConfig("noise std must be nonnegative".into()));
            }
        }
        Ok(())
    }
}

pub const PRESET_NAMES: [&str; 3] = ["separable", "hard", "null"];

/// Built-in cohort presets: `separable` has distinct coupling, amplitude and
/// noise per class; `hard` overlaps them; `null` makes all classes identical
/// for chance-level and false-positive-rate tests.
pub fn preset(name: &str) -> Result<SynthConfig> {
    match name {
        "separable" => Ok(SynthConfig {
            regions: 16,
            timepoints: 140,
            dt: 3.0,
            subjects_per_class: 37,
            seed: 2718,
            classes: [
                ClassSynthParams {
                    coupled_pairs: vec![(0, 1), (2, 3), (4, 5)],
                    coupling_kappa: 60.0,
                    amplitude: 1.6,
                    noise_std: 0.2,
                },
                ClassSynthParams {
                    coupled_pairs: vec![(0, 1), (2, 3)],
                    coupling_kappa: 8.0,
                    amplitude: 1.0,
                    noise_std: 0.35,
                },
                ClassSynthParams {
                    coupled_pairs: vec![],
                    coupling_kappa: 0.0,
                    amplitude: 0.55,
                    noise_std: 0.5,
                },
            ],
        }),
        "hard" => Ok(SynthConfig {
            regions: 16,
            timepoints: 140,
            dt: 3.0,
            subjects_per_class: 37,
            seed: 3141,
            classes: [
                ClassSynthParams {
                    coupled_pairs: vec![(0, 1), (2, 3)],
                    coupling_kappa: 20.0,
                    amplitude: 1.09,
                    noise_std: 0.4,
                },
                ClassSynthParams {
                    coupled_pairs: vec![(0, 1), (2, 3)],
                    coupling_kappa: 10.0,
                    amplitude: 1.0,
                    noise_std: 0.42,
                },
                ClassSynthParams {
                    coupled_pairs: vec![(0, 1)],
                    coupling_kappa: 4.0,
                    amplitude: 0.93,
                    noise_std: 0.45,
                },
            ],
        }),
        "null" => {
            let identical = ClassSynthParams {
                coupled_pairs: vec![],
                coupling_kappa: 0.0,
                amplitude: 1.0,
                noise_std: 0.4,
            };
            Ok(SynthConfig {
                regions: 8,
                timepoints: 140,
                dt: 3.0,
                subjects_per_class: 15,
                seed: 999,
                classes: [identical.clone(), identical.clone(), identical],
            })
        }
        other => Err(Error::InvalidConfig(format!(
            "unknown preset `{other}`, available: {}",
            PRESET_NAMES.join(", ")
        ))),
    }
}

/// Sample from a zero-mean von Mises distribution with concentration kappa
/// (Best-Fisher rejection sampling). kappa = 0 degenerates to the uniform
/// distribution on (-pi, pi]; infinite kappa returns 0.
pub fn von_mises<R: Rng + ?Sized>(rng: &mut R, kappa: f64) -> f64 {
    use std::f64::consts::PI;
    if !kappa.is_finite() {
        return 0.0;
    }
    if kappa < 1e-9 {
        return rng.random::<f64>() * 2.0 * PI - PI;
    }
    let tau = 1.0 + (1.0 + 4.0 * kappa * kappa).sqrt();
    let rho = (tau - (2.0 * tau).sqrt()) / (2.0 * kappa);
    let r = (1.0 + rho * rho) / (2.0 * rho);
    loop {
        let u1: f64 = rng.random();
        let z = (PI * u1).cos();
        let f = (1.0 + r * z) / (r + z);
        let c = kappa * (r - f);
        let u2: f64 = rng.random();
        if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
            let u3: f64 = rng.random();
            let angle = f.clamp(-1.0, 1.0).acos();
            return if u3 < 0.5 { -angle } else { angle };
        }
    }
}

/// Generate one subject: each region is a sum of three in-band sinusoids
/// plus white noise; coupled pairs share the dominant frequency with
/// per-sample phase jitter of the class's concentration. Deterministic in
/// (seed, class, subject index).
pub fn generate_subject(cfg: &SynthConfig, class: ClassLabel, index: usize) -> Result<RoiTimeSeries> {
    use std::f64::consts::TAU;
    cfg.validate()?;
    let params = &cfg.classes[class.index()];
    let n = cfg.regions;
    let t = cfg.timepoints;
    let mut rng =
        ChaCha8Rng::seed_from_u64(derive_seed2(cfg.seed, class.code() as u64, index as u64));

    // Base frequencies and phases for every region, drawn before any
    // coupling overrides so the draw order is independent of the pair list.
    let mut freqs = vec![[0.0f64; 3]; n];
    let mut phases = vec![[0.0f64; 3]; n];
    for r in 0..n {
        for c in 0..3 {
            freqs[r][c] = FREQ_RANGE.0 + rng.random::<f64>() * (FREQ_RANGE.1 - FREQ_RANGE.0);
            phases[r][c] = rng.random::<f64>() * TAU;
        }
    }

    // Coupling overrides: the target's dominant component tracks the source
    // (same frequency and phase) plus a constant offset and per-sample
    // jitter. Later pairs override earlier ones for a repeated target.
    let mut jitter: Vec<Option<Vec<f64>>> = vec![None; n];
    for &(src, dst) in &params.coupled_pairs {
        freqs[dst][0] = freqs[src][0];
        let offset = rng.random::<f64>() * TAU;
        phases[dst][0] = phases[src][0] + offset;
        let mut track = Vec::with_capacity(t);
        for _ in 0..t {
            track.push(von_mises(&mut rng, params.coupling_kappa));
        }
        jitter[dst] = Some(track);
    }

    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut data = Array2::zeros((n, t));
    for r in 0..n {
        for i in 0..t {
            let time = i as f64 * cfg.dt;
            let mut v = 0.0;
            for c in 0..3 {
                let mut arg = TAU * freqs[r][c] * time + phases[r][c];
                if c == 0 {
                    if let Some(track) = &jitter[r] {
                        arg += track[i];
                    }
                }
                v += COMPONENT_AMPS[c] * arg.cos();
            }
            let noise = if params.noise_std > 0.0 {
                params.noise_std * normal.sample(&mut rng)
            } else {
                // keep the draw so the stream advances identically
                let _ = normal.sample(&mut rng);
                0.0
            };
            data[[r, i]] = params.amplitude * v + noise;
        }
    }

    let subject_id = format!("{}_{:03}", class.name().to_lowercase(), index + 1);
    let names: Vec<String> = (1..=n).map(|i| format!("r{i:03}")).collect();
    RoiTimeSeries::new(subject_id, data, cfg.dt, Some(names))
}

/// Generate the full cohort on disk: `manifest.csv` plus one
/// `subjects/<id>.csv` per subject, in the exact format `ingest` reads.
pub fn generate_cohort(cfg: &SynthConfig, out_dir: &Path) -> Result<SubjectCohort> {
    cfg.validate()?;
    let subjects_dir = out_dir.join("subjects");
    fs::create_dir_all(&subjects_dir).map_err(|e| Error::io(&subjects_dir, e))?;

    let mut manifest = String::from("subject_id,label,path\n");
    let mut records = Vec::new();
    for class in ClassLabel::ALL {
        for index in 0..cfg.subjects_per_class {
            let ts = generate_subject(cfg, class, index)?;
            let rel = format!("subjects/{}.csv", ts.subject_id);
            let path = out_dir.join(&rel);
            write_roi_csv(&ts, &path)?;
            manifest.push_str(&format!("{},{},{}\n", ts.subject_id, class.name(), rel));
            records.push(CohortRecord {
                subject_id: ts.subject_id.clone(),
                label: class,
                path,
            });
        }
    }
    let manifest_path = out_dir.join("manifest.csv");
    fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;

    Ok(SubjectCohort {
        records,
        region_count: Some(cfg.regions),
    })
}
