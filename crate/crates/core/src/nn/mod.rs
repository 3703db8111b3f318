//! Minimal differentiable compute core and the segmentation network.

pub mod adam;
pub mod gradcheck;
pub mod model;
pub mod real;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{check_gradients, GradCheck};
pub use model::{forward, predict, predict_batch, ForwardPass, ModelParams, NetworkOutputs, PROJ_DIM};
pub use real::Real;
pub use tape::{NodeId, Tape, TapeGradients};
pub use tensor::Tensor;
