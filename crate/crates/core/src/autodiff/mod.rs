//! Minimal reverse-mode differentiation: tensors, an op tape, sequential
//! networks, plain SGD, target-network averaging and exploration noise.

pub mod checkpoint;
pub mod gradcheck;
mod kernels;
pub mod network;
pub mod noise;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use checkpoint::{Checkpoint, Record, CHECKPOINT_HEADER};
pub use gradcheck::{
    check_graph, grad_check, grad_check_with, nudge_from_kinks, readout_weights, relative_error,
    GradCheckOptions, GradCheckReport,
};
pub use network::{Bound, Layer, Mode, Network, NetworkBuilder, Param};
pub use noise::OuNoise;
pub use optim::{sgd_step, soft_update};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Real, Tensor};
