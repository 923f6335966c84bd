//! Library surface of the command-line driver, exposed for integration
//! tests and embedding.

pub mod config;
pub mod render;
pub mod runner;

pub use config::RunConfig;
pub use runner::{execute, CommandKind};
