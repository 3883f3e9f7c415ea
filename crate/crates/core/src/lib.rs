//! Multi-modal remote patient monitoring risk forecasting.
//!
//! Observation streams of different native rates (5-minute wearable epochs,
//! daily surveys, irregular clinical events) are turned into
//! `(time, variable, value)` tokens and fed to an attention forecaster that
//! scores the risk of an adverse event within the next four weeks.
//!
//! Pipeline: [`ingest`] → [`sampling`] → [`model`] → [`eval`], with
//! [`synth`] providing cohorts with known ground truth.

pub mod domain;
pub mod tensor;
pub mod ingest;
pub mod sampling;
pub mod model;
pub mod eval;
pub mod synth;
