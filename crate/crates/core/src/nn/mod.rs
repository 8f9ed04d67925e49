//! Reverse-mode autodiff over 2-D tensors, plus the optimizer stack.
//!
//! The design is a classic Wengert list: [`Tape`] owns an arena of nodes, each
//! op records enough to replay its local derivative, and [`Graph`] layers
//! parameter binding / RNG / composite layers on top. Networks are rebuilt
//! per example (define-by-run), which keeps variable-length sequence models
//! simple at the cost of some allocation churn.

mod adam;
mod container;
mod gradcheck;
mod graph;
mod init;
mod scalar;
mod schedule;
mod tape;
mod tensor;

pub use adam::{adam_step, clip_global_norm, AdamConfig, AdamState};
pub use container::{read_container, write_container, ArrayData, Container};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use graph::Graph;
pub use init::{init_glorot, init_param, init_zeros, Init};
pub use scalar::Scalar;
pub use schedule::{noam_lr, LrSchedule};
pub use tape::{Conv1dPadding, Tape, Value};
pub use tensor::{ParamStore, Tensor};
