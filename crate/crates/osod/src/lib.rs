//! IO, parallel evaluation, reports and the command line for `osod-core`.

pub mod cli;
pub mod error;
pub mod eval;
pub mod io;
pub mod oracle;
pub mod report;
pub mod selfcheck;

pub use error::{Error, Result};
