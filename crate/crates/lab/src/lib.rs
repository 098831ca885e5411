//! Std companion to `una-core`: dataset ingestion, policy checkpoints,
//! run directories, verification suites and the `una-lab` command line.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod report;
pub mod run;
pub mod tables;
pub mod verify;

pub use error::{LabError, LabResult};
