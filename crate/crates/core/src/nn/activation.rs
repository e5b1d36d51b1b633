use super::{no_cache, Layer, Mode, Param, Parameterized, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn new() -> Self {
        Relu::default()
    }
}

impl Parameterized for Relu {
    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

impl Layer for Relu {
    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Result<Tensor> {
        let mask: Vec<bool> = input.data().iter().map(|&v| v > 0.0).collect();
        let out = input
            .data()
            .iter()
            .map(|&v| if v > 0.0 { v } else { 0.0 })
            .collect();
        self.mask = Some(mask);
        Tensor::new(input.shape().to_vec(), out)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let mask = self.mask.as_ref().ok_or_else(no_cache)?;
        if mask.len() != grad_out.len() {
            return Err(Error::shape("relu grad does not match cached input"));
        }
        let dx = grad_out
            .data()
            .iter()
            .zip(mask)
            .map(|(&g, &m)| if m { g } else { 0.0 })
            .collect();
        Tensor::new(grad_out.shape().to_vec(), dx)
    }
}

fn row_max(row: &[f64]) -> f64 {
    row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Row-wise softmax of a rank-2 tensor.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    x.expect_rank(2, "softmax")?;
    let mut out = x.clone();
    for t in 0..x.shape()[0] {
        let row = out.row_mut(t);
        let m = row_max(row);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(out)
}

/// Row-wise log-softmax of a rank-2 tensor.
pub fn log_softmax_rows(x: &Tensor) -> Result<Tensor> {
    x.expect_rank(2, "log_softmax")?;
    let mut out = x.clone();
    for t in 0..x.shape()[0] {
        let row = out.row_mut(t);
        let m = row_max(row);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|v| *v -= lse);
    }
    Ok(out)
}

/// Input gradient of softmax given its output `y` and upstream `dy`.
pub fn softmax_backward(y: &Tensor, dy: &Tensor) -> Result<Tensor> {
    if y.shape() != dy.shape() {
        return Err(Error::shape("softmax grad shape mismatch"));
    }
    let mut dx = dy.clone();
    for t in 0..y.shape()[0] {
        let s: f64 = y.row(t).iter().zip(dy.row(t)).map(|(a, b)| a * b).sum();
        for (d, &p) in dx.row_mut(t).iter_mut().zip(y.row(t)) {
            *d = p * (*d - s);
        }
    }
    Ok(dx)
}

/// Input gradient of log-softmax given its output `log_y` and upstream `dy`.
pub fn log_softmax_backward(log_y: &Tensor, dy: &Tensor) -> Result<Tensor> {
    if log_y.shape() != dy.shape() {
        return Err(Error::shape("log_softmax grad shape mismatch"));
    }
    let mut dx = dy.clone();
    for t in 0..log_y.shape()[0] {
        let s: f64 = dy.row(t).iter().sum();
        for (d, &lp) in dx.row_mut(t).iter_mut().zip(log_y.row(t)) {
            *d -= lp.exp() * s;
        }
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -500.0, 0.0, 700.0]).unwrap();
        let y = softmax_rows(&x).unwrap();
        for t in 0..2 {
            assert!((y.row(t).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let ly = log_softmax_rows(&x).unwrap();
        assert!(ly.all_finite());
    }

    #[test]
    fn relu_zeroes_negatives() {
        let mut r = Relu::new();
        let x = Tensor::new(vec![4], vec![-1.0, 0.0, 2.0, -0.5]).unwrap();
        let y = r.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 2.0, 0.0]);
        let dx = r.backward(&Tensor::filled(&[4], 1.0)).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 1.0, 0.0]);
    }
}
