//! Weakly supervised nodule segmentation from four-point annotations.
//!
//! The crate is `no_std` (it needs `alloc`) and holds every algorithmic piece:
//!
//! - [`image`]: grids, masks, points, boxes and quadrilateral rasterization.
//! - [`prior`]: the distance/similarity fusion prior fed to the network as a second channel.
//! - [`labels`]: box, pure-foreground, pure-background and mixed labels plus precision audits.
//! - [`nn`]: a small reverse-mode tape, the encoder-decoder model and Adam.
//! - [`losses`]: box alignment, batch-wide contrastive and combined objectives.
//! - [`metrics`]: Dice, IoU and Hausdorff distance.
//! - [`phantom`]: synthetic ultrasound-like phantoms with simulated annotations.
//! - [`pipeline`]: ablation presets, input assembly, training, evaluation and inference.
//!
//! File formats and the command line live in the companion `pointseg` crate.
#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod image;
pub mod labels;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod phantom;
pub mod pipeline;
pub mod prior;
mod util;

pub use error::{Error, Result};
