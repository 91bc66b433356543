//! Batch studies of the two-stage market: a TOML config drives single
//! solves, RES and risk-weight sweeps, and the verification suite, with
//! CSV and JSON outputs.

pub mod cli;
pub mod config;
pub mod error;
pub mod format;
pub mod study;
pub mod verify;

pub use config::{Config, ConfigError, Overrides, Preset};
pub use error::{exit, SimError};
