//! Experiment pipeline for copy detection pattern authentication: dataset
//! generation, print and capture simulation, attacks, pix2pix training,
//! scoring and ROC reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrate;
pub mod check;
pub mod cli;
pub mod config;
mod error;
pub mod qclog;
pub mod record;
pub mod report;
pub mod stages;
pub mod workspace;

pub use config::ExperimentConfig;
pub use error::{LabError, Result};
pub use workspace::Workspace;
