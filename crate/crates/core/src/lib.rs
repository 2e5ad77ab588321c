//! Selective prediction over scored classifier outputs.
//!
//! The pipeline is: ingest prediction records ([`dataset`]), turn them into
//! per-record confidence scores ([`confidence`], [`acr`]), evaluate the
//! scores with risk-coverage machinery ([`metrics`]), and diagnose why a
//! fused score helps ([`analysis`]). Because no real model backbone lives in
//! this crate, [`synth`] generates desk-scale datasets from a known
//! generative model with controllable miscalibration, which also makes the
//! Bayes-optimal correctness probability observable for verification.
//!
//! All evaluation-side types are immutable and the scoring functions are
//! pure, so everything here is safe to call from any number of threads. With
//! the default `parallel` feature the per-record loops run on rayon; with
//! `--no-default-features` the same entry points run sequentially and
//! produce identical output.

pub mod acr;
pub mod analysis;
pub mod confidence;
pub mod dataset;
mod error;
mod exec;
pub mod metrics;
pub mod neural;
pub mod synth;

pub use error::{Error, Result};
