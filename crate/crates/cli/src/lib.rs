//! Experiment orchestration around the core routines: configuration
//! loading, checkpoint persistence, CSV emission, and run manifests.

use std::fmt;
use std::path::PathBuf;

pub mod checkpoint;
pub mod config;
pub mod csvout;
pub mod manifest;

/// A configuration problem: bad file, bad field, bad combination.
/// Drivers map this to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

/// A required checkpoint file does not exist. Drivers map this to exit
/// code 3.
#[derive(Debug)]
pub struct MissingCheckpoint(pub PathBuf);

impl fmt::Display for MissingCheckpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "missing checkpoint: {}", self.0.display())
    }
}

impl std::error::Error for MissingCheckpoint {}
