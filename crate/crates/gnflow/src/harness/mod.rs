//! Experiment harness: config files, synthetic data, sweep execution, and
//! invariant checks. This is everything the CLI binary does, exposed as a
//! library so tests (and fuzzers) can drive each entry point directly.

pub mod check;
pub mod config;
pub mod run;
pub mod synth;
