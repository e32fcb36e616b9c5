//! Batch experiment harness for two-stage distribution regression.
//!
//! Three seeded desk-scale studies are supported, each driven by a JSON
//! configuration and emitting `rows.csv`, `summary.json`, and (for the two
//! log-log studies) `plot.svg` into an output directory:
//!
//! - **rates**: test error across a grid of sample sizes with the ridge
//!   level, atom count, and loss scale set by the built-in schedules.
//! - **gap**: distance between the robust and ridge fits across a sweep of
//!   loss scales, against the computable bound.
//! - **robustness**: paired robust-vs-ridge test error under outlier
//!   contamination.
//!
//! Outputs are deterministic: a fixed (config, master seed) pair yields
//! byte-identical `rows.csv` regardless of the worker count. Wall-clock
//! timing is reported only in `summary.json` and is excluded from that
//! contract.

pub mod config;
pub mod emit;
pub mod seed;
pub mod study;
pub mod svg;
