use rand::Rng;

use super::{matvec_acc, matvec_backward, no_cache, Layer, Mode, Param, Parameterized, Tensor};
use crate::error::{Error, Result};

/// Row-wise affine map `[T, in] -> [T, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Linear {
    pub fn new<R: Rng>(name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Linear {
            weight: Param::xavier(format!("{name}.weight"), &[out_dim, in_dim], in_dim, out_dim, rng),
            bias: Param::zeros(format!("{name}.bias"), &[out_dim]),
            input: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.shape()[0]
    }
}

impl Parameterized for Linear {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

impl Layer for Linear {
    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Result<Tensor> {
        input.expect_rank(2, "linear")?;
        if input.shape()[1] != self.in_dim() {
            return Err(Error::shape(format!(
                "linear expects {} features, got {}",
                self.in_dim(),
                input.shape()[1]
            )));
        }
        let rows = input.shape()[0];
        let out_dim = self.out_dim();
        let mut out = Tensor::zeros(&[rows, out_dim]);
        for t in 0..rows {
            let y = out.row_mut(t);
            y.copy_from_slice(self.bias.value.data());
            matvec_acc(self.weight.value.data(), input.row(t), y);
        }
        self.input = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let input = self.input.as_ref().ok_or_else(no_cache)?;
        let rows = input.shape()[0];
        if grad_out.shape() != [rows, self.out_dim()] {
            return Err(Error::shape("linear grad does not match cached output"));
        }
        let mut dx = Tensor::zeros(input.shape());
        for t in 0..rows {
            let dy = grad_out.row(t);
            for (b, g) in self.bias.grad.data_mut().iter_mut().zip(dy) {
                *b += g;
            }
            matvec_backward(
                self.weight.value.data(),
                self.weight.grad.data_mut(),
                input.row(t),
                dy,
                dx.row_mut(t),
            );
        }
        Ok(dx)
    }
}
