//! Metatasks: OpenML task data bundled with the stored predictions of its
//! best base models, plus simulated ensemble techniques evaluated on them.
//!
//! The pipeline is `build` (fetch from OpenML) → `curate` (filter base models
//! and metatasks) → `simulate` (run ensemble techniques fold by fold) →
//! `report` (closed-gap tables).

pub mod arff;
pub mod build;
pub mod cli;
pub mod curation;
pub mod ensemble;
pub mod harness;
pub mod learners;
pub mod metrics;
pub mod model;
pub mod openml;
pub mod parser;
pub mod seed;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
