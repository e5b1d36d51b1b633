//! Differentiable building blocks with hand-written reverse passes.
//!
//! Every layer works on a single example. Image-like activations are
//! `[channels, time, freq]`; sequences are `[time, features]`.

mod activation;
mod batchnorm;
mod conv;
mod linear;
mod lstm;
mod optim;
mod param;
mod pool;
mod tensor;

pub use activation::{
    log_softmax_backward, log_softmax_rows, softmax_backward, softmax_rows, Relu,
};
pub use batchnorm::BatchNorm2d;
pub use conv::Conv2d;
pub use linear::Linear;
pub use lstm::{blstm_forward, lstm_step, Blstm, LstmCache, LstmCellParams, LstmStepCache};
pub use optim::{clip_global_norm, global_norm, Adam, OptimizerConfig, StepOutcome};
pub use param::{Param, Parameterized};
pub use pool::MaxPool2d;
pub use tensor::Tensor;

pub(crate) use tensor::{matvec_acc, matvec_backward};

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A differentiable layer. `forward` caches what `backward` needs;
/// `backward` accumulates parameter gradients and returns the input gradient.
pub trait Layer: Parameterized {
    fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor>;
    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor>;

    /// Non-trainable tensors that still belong in a checkpoint.
    fn buffers(&self) -> Vec<(&'static str, &Tensor)> {
        Vec::new()
    }

    fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        Vec::new()
    }
}

pub(crate) fn no_cache() -> crate::error::Error {
    crate::error::Error::invalid("backward called before forward")
}
