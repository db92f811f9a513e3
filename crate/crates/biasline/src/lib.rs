//! Measure gender–occupation associations in text corpora and in language
//! model outputs, and compare the two.
//!
//! The pipeline: load a term lexicon ([`lexicon`]), stream a corpus
//! ([`corpus`]), locate occupation mentions and segment sentences
//! ([`textscan`]), tally gendered context around each mention ([`classify`]),
//! and turn the tallies into skew scores, amplification deltas, correlations,
//! and regressions ([`metrics`]). [`synth`] plants corpora with known gender
//! proportions for calibration, [`genharness`] samples completions from an
//! OpenAI-compatible endpoint, and [`report`] renders a deterministic report
//! bundle. [`cli`] wires it all into the `biasline` binary.

pub mod classify;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod genharness;
pub mod lexicon;
pub mod metrics;
pub mod report;
pub mod synth;
pub mod textscan;

pub use error::{Error, Result};
