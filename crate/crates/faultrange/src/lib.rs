//! File formats, parallel execution and the command line for `faultrange-core`.

pub mod cli;
pub mod container;
pub mod error;
pub mod fmap;
pub mod idx;
pub mod json;
pub mod parallel;
pub mod report;

pub use error::{Error, Result};
