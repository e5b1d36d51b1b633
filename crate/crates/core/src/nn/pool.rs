use super::{no_cache, Layer, Mode, Param, Parameterized, Tensor};
use crate::error::{Error, Result};

/// Max pooling without padding; output extent is `floor((n - k) / s) + 1`.
#[derive(Clone, Debug)]
pub struct MaxPool2d {
    kernel: (usize, usize),
    stride: (usize, usize),
    /// input shape and flat argmax index per output cell
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool2d {
    pub fn new(kernel: (usize, usize), stride: (usize, usize)) -> Result<Self> {
        if kernel.0 == 0 || kernel.1 == 0 || stride.0 == 0 || stride.1 == 0 {
            return Err(Error::invalid(format!(
                "maxpool kernel {kernel:?} and stride {stride:?} must be positive"
            )));
        }
        Ok(MaxPool2d {
            kernel,
            stride,
            cache: None,
        })
    }

    /// `None` when the input is smaller than one window.
    pub fn output_extent(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        if h < self.kernel.0 || w < self.kernel.1 {
            return None;
        }
        Some((
            (h - self.kernel.0) / self.stride.0 + 1,
            (w - self.kernel.1) / self.stride.1 + 1,
        ))
    }
}

impl Parameterized for MaxPool2d {
    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

impl Layer for MaxPool2d {
    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Result<Tensor> {
        input.expect_rank(3, "maxpool2d")?;
        let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (ho, wo) = self.output_extent(h, w).ok_or_else(|| {
            Error::invalid(format!(
                "maxpool window {:?} does not fit input {h}x{w}",
                self.kernel
            ))
        })?;
        let x = input.data();
        let mut out = Vec::with_capacity(c * ho * wo);
        let mut arg = Vec::with_capacity(c * ho * wo);
        for ch in 0..c {
            for y in 0..ho {
                for xo in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for i in 0..self.kernel.0 {
                        for j in 0..self.kernel.1 {
                            let idx = (ch * h + y * self.stride.0 + i) * w + xo * self.stride.1 + j;
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_idx);
                }
            }
        }
        self.cache = Some((input.shape().to_vec(), arg));
        Tensor::new(vec![c, ho, wo], out)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let (shape, arg) = self.cache.as_ref().ok_or_else(no_cache)?;
        if grad_out.len() != arg.len() {
            return Err(Error::shape("maxpool grad does not match cached output"));
        }
        let mut dx = Tensor::zeros(shape);
        for (&g, &idx) in grad_out.data().iter().zip(arg) {
            dx.data_mut()[idx] += g;
        }
        Ok(dx)
    }
}
