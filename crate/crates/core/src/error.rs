use alloc::string::String;
use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Sample pool a contrastive term draws from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Category {
    Foreground,
    Background,
}

impl core::fmt::Display for Category {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Category::Foreground => "foreground",
            Category::Background => "background",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("expected 4 points, got {0}")]
    WrongArity(usize),
    #[error("annotation contains duplicate points")]
    DuplicatePoints,
    #[error("point ({x}, {y}) lies outside a {width}x{height} grid")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid box: x {x_min}..={x_max}, y {y_min}..={y_max}")]
    InvalidBox {
        x_min: usize,
        y_min: usize,
        x_max: usize,
        y_max: usize,
    },
    #[error("dimension mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    DimensionMismatch {
        left_w: usize,
        left_h: usize,
        right_w: usize,
        right_h: usize,
    },
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("theta must be positive, got {0}")]
    NonPositiveTheta(f64),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("insufficient {0} samples")]
    InsufficientSamples(Category),
    #[error("contrastive loss needs at least one {0}")]
    EmptyCategory(&'static str),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("record {0} has no ground-truth mask")]
    MissingGroundTruth(String),
}
