//! File formats, dataset IO and the command-line front end for the
//! `pointseg-core` segmentation library.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod imaging;
pub mod manifest;
pub mod prior_cache;
pub mod report;

pub use error::{Error, Result};
pub use pointseg_core as core;
