//! Command-line workbench around `fvrom`: case files, the staged
//! offline/online pipeline and its on-disk artifacts.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod artifacts;
pub mod config;
pub mod error;
pub mod stages;

pub use artifacts::{Workspace, STAGES};
pub use config::{load_case, parse_case, CaseConfig, ConfigError};
pub use error::{CliError, Result};
pub use stages::{run_pipeline, run_stage};
