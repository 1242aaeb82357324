//! Minimal dense-tensor engine with reverse-mode differentiation.
//!
//! Everything runs in 64-bit floats. The layer set is exactly what the
//! generator and discriminator need: convolution, transposed convolution,
//! instance normalization, ReLU/LeakyReLU/sigmoid, channel concatenation and
//! spatial noise replication, plus Adam with a linear-decay schedule and a
//! checkpoint container.

mod adam;
mod checkpoint;
mod conv;
mod graph;
mod norm;
mod tensor;

pub use adam::{lr_at, AdamConfig, AdamError, AdamState, LrSchedule};
pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointError};
pub use conv::{
    conv2d_forward, conv2d_output_size, conv_transpose2d_forward, conv_transpose2d_output_size,
};
pub use graph::{GradSink, Gradients, Graph, Var};
pub use norm::INSTANCE_NORM_EPS;
pub use tensor::Tensor;
