//! Command-line pipeline and file formats around `embo-core`.

pub mod config;
pub mod error;
pub mod fixture;
pub mod io;
pub mod pipeline;
pub mod report;

pub use error::RunError;
pub use pipeline::{run, Command, RunOptions, Session};
