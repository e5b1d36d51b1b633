use super::{no_cache, Layer, Mode, Param, Parameterized, Tensor};
use crate::error::{Error, Result};

const EPS: f64 = 1e-5;

/// Per-channel batch normalization over all (time, freq) positions.
/// Running statistics use momentum 0.9 and serve inference mode.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    momentum: f64,
    cache: Option<Cache>,
}

#[derive(Clone, Debug)]
struct Cache {
    shape: Vec<usize>,
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    train: bool,
}

impl BatchNorm2d {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(format!("{name}.gamma"), Tensor::filled(&[channels], 1.0)),
            beta: Param::zeros(format!("{name}.beta"), &[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], 1.0),
            momentum: 0.9,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }
}

impl Parameterized for BatchNorm2d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

impl Layer for BatchNorm2d {
    fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        input.expect_rank(3, "batchnorm")?;
        let c = input.shape()[0];
        if c != self.channels() {
            return Err(Error::shape(format!(
                "batchnorm has {} channels, input has {c}",
                self.channels()
            )));
        }
        let n = input.shape()[1] * input.shape()[2];
        if n == 0 {
            return Err(Error::invalid("batchnorm input is empty"));
        }
        let x = input.data();
        let mut out = vec![0.0; x.len()];
        let mut x_hat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let xs = &x[ch * n..(ch + 1) * n];
            let (mean, var) = match mode {
                Mode::Train => {
                    let mean = xs.iter().sum::<f64>() / n as f64;
                    let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                    let unbiased = if n > 1 { var * n as f64 / (n - 1) as f64 } else { var };
                    let m = self.momentum;
                    self.running_mean.data_mut()[ch] =
                        m * self.running_mean.data()[ch] + (1.0 - m) * mean;
                    self.running_var.data_mut()[ch] =
                        m * self.running_var.data()[ch] + (1.0 - m) * unbiased;
                    (mean, var)
                }
                Mode::Eval => (self.running_mean.data()[ch], self.running_var.data()[ch]),
            };
            let is = 1.0 / (var + EPS).sqrt();
            inv_std[ch] = is;
            let (g, b) = (self.gamma.value.data()[ch], self.beta.value.data()[ch]);
            for k in 0..n {
                let xh = (xs[k] - mean) * is;
                x_hat[ch * n + k] = xh;
                out[ch * n + k] = g * xh + b;
            }
        }
        self.cache = Some(Cache {
            shape: input.shape().to_vec(),
            x_hat,
            inv_std,
            train: mode == Mode::Train,
        });
        Tensor::new(input.shape().to_vec(), out)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or_else(no_cache)?;
        if grad_out.shape() != cache.shape.as_slice() {
            return Err(Error::shape("batchnorm grad does not match cached input"));
        }
        let c = cache.shape[0];
        let n = cache.shape[1] * cache.shape[2];
        let dy = grad_out.data();
        let mut dx = vec![0.0; dy.len()];
        for ch in 0..c {
            let g = &dy[ch * n..(ch + 1) * n];
            let xh = &cache.x_hat[ch * n..(ch + 1) * n];
            let sum_g: f64 = g.iter().sum();
            let sum_gx: f64 = g.iter().zip(xh).map(|(a, b)| a * b).sum();
            self.beta.grad.data_mut()[ch] += sum_g;
            self.gamma.grad.data_mut()[ch] += sum_gx;
            let scale = self.gamma.value.data()[ch] * cache.inv_std[ch];
            let out = &mut dx[ch * n..(ch + 1) * n];
            if cache.train {
                let (mg, mgx) = (sum_g / n as f64, sum_gx / n as f64);
                for k in 0..n {
                    out[k] = scale * (g[k] - mg - xh[k] * mgx);
                }
            } else {
                for k in 0..n {
                    out[k] = scale * g[k];
                }
            }
        }
        Tensor::new(cache.shape.clone(), dx)
    }

    fn buffers(&self) -> Vec<(&'static str, &Tensor)> {
        vec![("running_mean", &self.running_mean), ("running_var", &self.running_var)]
    }

    fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("running_mean", &mut self.running_mean),
            ("running_var", &mut self.running_var),
        ]
    }
}
