//! Pipeline configuration: defaults for every stage, overridable from a flat
//! `key = value` text file (one dotted key per line, `#` comments). Unknown
//! keys are rejected.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::{
    BandReduction, EntropyConfig, PhaseForm, WelchConfig, WindowKind,
};
use crate::selection::{CombinationRule, SfffsConfig};
use crate::seeding::derive_seed;
use crate::sigproc::{FilterSpec, TfpConfig};
use crate::synth::{preset, SynthConfig};

#[derive(Debug, Clone, Serialize)]
pub struct SamplingKnobs {
    pub dt: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FilterKnobs {
    pub f_lo: f64,
    pub f_hi: f64,
    pub order: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TfpKnobs {
    pub ensembles: usize,
    pub dither: f64,
    pub seed: u64,
    pub input_dither_snr_db: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EntropyKnobs {
    pub bins: usize,
    pub log_base: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct WelchKnobs {
    pub segment: usize,
    pub overlap: f64,
    pub window: WindowKind,
    pub reduction: BandReduction,
}

#[derive(Debug, Clone, Serialize)]
pub struct FeatureKnobs {
    pub phase_form: PhaseForm,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelectionKnobs {
    pub alpha: f64,
    pub rule: CombinationRule,
    pub folds: usize,
    pub max_sets: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct KnnKnobs {
    pub k: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitKnobs {
    pub per_class_test: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthKnobs {
    pub preset: String,
    pub regions: Option<usize>,
    pub timepoints: Option<usize>,
    pub subjects_per_class: Option<usize>,
    pub seed: Option<u64>,
}

/// Every stage's knobs in one place. Field defaults mirror the module
/// defaults; `parse` overrides them from the config text.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineConfig {
    pub sampling: SamplingKnobs,
    pub filter: FilterKnobs,
    pub tfp: TfpKnobs,
    pub entropy: EntropyKnobs,
    pub welch: WelchKnobs,
    pub features: FeatureKnobs,
    pub selection: SelectionKnobs,
    pub knn: KnnKnobs,
    pub split: SplitKnobs,
    pub synth: SynthKnobs,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sampling: SamplingKnobs { dt: 3.0 },
            filter: FilterKnobs { f_lo: 0.01, f_hi: 0.1, order: 4 },
            tfp: TfpKnobs { ensembles: 64, dither: 0.01, seed: 42, input_dither_snr_db: None },
            entropy: EntropyKnobs { bins: 16, log_base: 2.0 },
            welch: WelchKnobs {
                segment: 64,
                overlap: 0.5,
                window: WindowKind::Hann,
                reduction: BandReduction::Mean,
            },
            features: FeatureKnobs { phase_form: PhaseForm::Unwrapped },
            selection: SelectionKnobs {
                alpha: 0.05,
                rule: CombinationRule::Union,
                folds: 5,
                max_sets: 6,
                seed: 7,
            },
            knn: KnnKnobs { k: 5 },
            split: SplitKnobs { per_class_test: 10, seed: 17 },
            synth: SynthKnobs {
                preset: "separable".into(),
                regions: None,
                timepoints: None,
                subjects_per_class: None,
                seed: None,
            },
        }
    }
}

fn parse_value<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.parse::<T>().map_err(|_| Error::Config {
        line,
        message: format!("cannot parse `{value}` as a value for `{key}`"),
    })
}

impl PipelineConfig {
    /// Parse a flat dotted-key config text over the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::Config {
                    line,
                    message: format!("expected `key = value`, got `{content}`"),
                });
            };
            let key = key.trim();
            let value = value.trim();
            match key {
                "sampling.dt" => cfg.sampling.dt = parse_value(line, key, value)?,
                "filter.f_lo" => cfg.filter.f_lo = parse_value(line, key, value)?,
                "filter.f_hi" => cfg.filter.f_hi = parse_value(line, key, value)?,
                "filter.order" => cfg.filter.order = parse_value(line, key, value)?,
                "tfp.ensembles" => cfg.tfp.ensembles = parse_value(line, key, value)?,
                "tfp.dither" => cfg.tfp.dither = parse_value(line, key, value)?,
                "tfp.seed" => cfg.tfp.seed = parse_value(line, key, value)?,
                "tfp.input_dither_snr_db" => {
                    cfg.tfp.input_dither_snr_db = Some(parse_value(line, key, value)?)
                }
                "entropy.bins" => cfg.entropy.bins = parse_value(line, key, value)?,
                "entropy.log_base" => cfg.entropy.log_base = parse_value(line, key, value)?,
                "welch.segment" => cfg.welch.segment = parse_value(line, key, value)?,
                "welch.overlap" => cfg.welch.overlap = parse_value(line, key, value)?,
                "welch.window" => {
                    cfg.welch.window = match value {
                        "hann" => WindowKind::Hann,
                        "rectangular" => WindowKind::Rectangular,
                        other => {
                            return Err(Error::Config {
                                line,
                                message: format!(
                                    "unknown window `{other}` (expected hann or rectangular)"
                                ),
                            })
                        }
                    }
                }
                "welch.reduction" => {
                    cfg.welch.reduction = match value {
                        "mean" => BandReduction::Mean,
                        "max" => BandReduction::Max,
                        other => {
                            return Err(Error::Config {
                                line,
                                message: format!("unknown reduction `{other}` (expected mean or max)"),
                            })
                        }
                    }
                }
                "features.phase_form" => {
                    cfg.features.phase_form = match value {
                        "unwrapped" => PhaseForm::Unwrapped,
                        "wrapped" => PhaseForm::Wrapped,
                        other => {
                            return Err(Error::Config {
                                line,
                                message: format!(
                                    "unknown phase form `{other}` (expected unwrapped or wrapped)"
                                ),
                            })
                        }
                    }
                }
                "selection.alpha" => cfg.selection.alpha = parse_value(line, key, value)?,
                "selection.rule" => {
                    cfg.selection.rule = match value {
                        "union" => CombinationRule::Union,
                        "intersection" => CombinationRule::Intersection,
                        other => {
                            return Err(Error::Config {
                                line,
                                message: format!(
                                    "unknown rule `{other}` (expected union or intersection)"
                                ),
                            })
                        }
                    }
                }
                "selection.folds" => cfg.selection.folds = parse_value(line, key, value)?,
                "selection.max_sets" => cfg.selection.max_sets = parse_value(line, key, value)?,
                "selection.seed" => cfg.selection.seed = parse_value(line, key, value)?,
                "knn.k" => cfg.knn.k = parse_value(line, key, value)?,
                "split.per_class_test" => cfg.split.per_class_test = parse_value(line, key, value)?,
                "split.seed" => cfg.split.seed = parse_value(line, key, value)?,
                "synth.preset" => cfg.synth.preset = value.to_string(),
                "synth.regions" => cfg.synth.regions = Some(parse_value(line, key, value)?),
                "synth.timepoints" => cfg.synth.timepoints = Some(parse_value(line, key, value)?),
                "synth.subjects_per_class" => {
                    cfg.synth.subjects_per_class = Some(parse_value(line, key, value)?)
                }
                "synth.seed" => cfg.synth.seed = Some(parse_value(line, key, value)?),
                other => {
                    return Err(Error::Config {
                        line,
                        message: format!("unknown key `{other}`"),
                    })
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Cross-field validation, delegated to the owning modules.
    pub fn validate(&self) -> Result<()> {
        if !(self.sampling.dt > 0.0 && self.sampling.dt.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sampling.dt must be positive, got {}",
                self.sampling.dt
            )));
        }
        self.filter_spec().validate()?;
        self.tfp_config().validate()?;
        self.entropy_config().validate()?;
        self.welch_config().validate()?;
        if !(0.0 < self.selection.alpha && self.selection.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "selection.alpha must lie in (0, 1), got {}",
                self.selection.alpha
            )));
        }
        if self.selection.folds < 2 {
            return Err(Error::InvalidConfig("selection.folds must be at least 2".into()));
        }
        if !(1..=6).contains(&self.selection.max_sets) {
            return Err(Error::InvalidConfig("selection.max_sets must lie in 1..=6".into()));
        }
        if self.knn.k < 1 {
            return Err(Error::InvalidConfig("knn.k must be at least 1".into()));
        }
        Ok(())
    }

    pub fn filter_spec(&self) -> FilterSpec {
        FilterSpec {
            f_lo: self.filter.f_lo,
            f_hi: self.filter.f_hi,
            order: self.filter.order,
            fs: 1.0 / self.sampling.dt,
        }
    }

    pub fn tfp_config(&self) -> TfpConfig {
        TfpConfig {
            ensembles: self.tfp.ensembles,
            dither: self.tfp.dither,
            seed: self.tfp.seed,
            input_dither_snr_db: self.tfp.input_dither_snr_db,
        }
    }

    pub fn entropy_config(&self) -> EntropyConfig {
        EntropyConfig { bins: self.entropy.bins, log_base: self.entropy.log_base }
    }

    /// Welch settings with the averaging band tied to the filter passband.
    pub fn welch_config(&self) -> WelchConfig {
        WelchConfig {
            segment_length: self.welch.segment,
            overlap_fraction: self.welch.overlap,
            window: self.welch.window,
            band: (self.filter.f_lo, self.filter.f_hi),
            reduction: self.welch.reduction,
        }
    }

    pub fn sfffs_config(&self) -> SfffsConfig {
        SfffsConfig {
            criterion_folds: self.selection.folds,
            knn_k: self.knn.k,
            seed: self.selection.seed,
            max_sets: self.selection.max_sets,
        }
    }

    /// Materialize the synth preset with any scalar overrides applied.
    pub fn synth_config(&self) -> Result<SynthConfig> {
        let mut cfg = preset(&self.synth.preset)?;
        if let Some(n) = self.synth.regions {
            cfg.regions = n;
        }
        if let Some(t) = self.synth.timepoints {
            cfg.timepoints = t;
        }
        if let Some(s) = self.synth.subjects_per_class {
            cfg.subjects_per_class = s;
        }
        if let Some(seed) = self.synth.seed {
            cfg.seed = seed;
        }
        cfg.dt = self.sampling.dt;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Re-derive every stage seed from one master seed.
    pub fn apply_master_seed(&mut self, seed: u64) {
        self.tfp.seed = derive_seed(seed, 1);
        self.selection.seed = derive_seed(seed, 2);
        self.split.seed = derive_seed(seed, 3);
        self.synth.seed = Some(derive_seed(seed, 4));
    }
}
