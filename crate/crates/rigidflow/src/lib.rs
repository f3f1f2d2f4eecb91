//! File formats, configuration files, scene directories and the command-line
//! front end for [`rigidflow_core`].

pub mod bundle;
pub mod cli;
pub mod config;
pub mod formats;
pub mod report;
pub mod viz;

pub use rigidflow_core as core;
