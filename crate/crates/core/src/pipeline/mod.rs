//! End-to-end experiment runner driven by a TOML configuration.

mod config;
mod run;

pub use config::*;
pub use run::*;
