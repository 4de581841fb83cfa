//! A small reverse-mode autodiff core: dense tensors, a recording tape with
//! the handful of operators the lifted layers need, MLP parameter blocks, the
//! Adam optimizer, finite-difference checking and the `GPXM1` checkpoint
//! format.

mod checkpoint;
mod gradcheck;
mod mlp;
mod optim;
mod tape;
mod tensor;

pub use checkpoint::{read_checkpoint, read_checkpoint_file, write_checkpoint, write_checkpoint_file};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use mlp::{mlp_forward, Activation, BoundMlp, DenseLayer, MlpParams};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use tape::{Gradients, ReduceMode, Tape, Var};
pub use tensor::{Real, Tensor};

/// Trainable parameter blocks expose their tensors in a fixed order. The
/// order of `tensors` and `tensors_mut` must agree; binding to a tape
/// follows the same order.
pub trait Parameters<T: Real> {
    fn tensors(&self) -> Vec<(String, &Tensor<T>)>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>>;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.numel()).sum()
    }
}
