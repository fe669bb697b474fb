//! Core library for the ShieldUp! scam-inoculation platform.
//!
//! - [`content`]: scenario file format, tactic taxonomy and corpus linting.
//! - [`engine`]: deterministic play-through of scenario graphs and the skill ladder.
//! - [`sdat`]: the ten-item discernment test with parallel forms.
//! - [`psychometrics`]: reliability, 2PL calibration, factor analysis and item selection.
//! - [`analysis`]: ANCOVA of trial outcomes.
//! - [`trial`]: enrollment, block randomization, phase tracking and the event log.
//! - [`simulation`]: synthetic cohorts driving the whole pipeline.

pub mod analysis;
pub mod content;
pub mod demo;
pub mod engine;
pub mod psychometrics;
pub mod sdat;
pub mod simulation;
pub mod stats;
pub mod trial;
