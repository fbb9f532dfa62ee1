//! File formats, experiment specs and the `logitrange` command line on top
//! of `logitrange-core`.
//!
//! Feature matrices use the VLF1 format and labels VLL1, see [`format`].

pub mod cli;
pub mod data;
pub mod error;
pub mod format;
pub mod kv;
pub mod params;
pub mod report;
pub mod run;
pub mod spec;

pub use error::{Error, FormatError, Result};
