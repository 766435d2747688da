//! Files, parallel execution and the `htmc` command line on top of `htmc-core`.

pub mod bench;
pub mod cli;
pub mod error;
pub mod formats;
pub mod parallel;

pub use error::{Failure, Result};
pub use htmc_core as core;
