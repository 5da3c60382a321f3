//! phasefeat: instantaneous phase/envelope features and three-class KNN
//! evaluation for ROI time series.
//!
//! The pipeline runs in five stages, each usable on its own:
//!
//! ```text
//! manifest + ROI CSVs              (ingest)
//!   -> band-pass, analytic signal, dithered phase/envelope estimates (sigproc)
//!   -> power / entropy / PLV / MSC feature sets                      (features)
//!   -> floating set selection + t-test filtering                     (selection)
//!   -> standardized 5-NN, confusion matrix, metrics                  (classify)
//! ```
//!
//! A synthetic cohort generator (`synth`) with controllable class-dependent
//! phase coupling serves as the reproducible test bed, and `pipeline` wires
//! everything into the `phasefeat` CLI.

pub mod classify;
pub mod config;
pub mod error;
pub mod ingest;
pub mod pipeline;
pub mod seeding;
pub mod selection;
pub mod features;
pub mod sigproc;
pub mod synth;

pub use error::{Error, Result};
