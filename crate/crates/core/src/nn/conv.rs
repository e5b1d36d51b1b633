use rand::Rng;

use super::{no_cache, Layer, Mode, Param, Parameterized, Tensor};
use crate::error::{Error, Result};

/// 2-D convolution with "same" zero padding: output extent is
/// `ceil(input / stride)` along each axis.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    kernel: (usize, usize),
    stride: (usize, usize),
    input: Option<Tensor>,
}

fn valid_range(out_len: usize, in_len: usize, stride: usize, offset: isize) -> (usize, usize) {
    // positions p in [lo, hi) with 0 <= p*stride + offset < in_len
    let lo = if offset >= 0 {
        0
    } else {
        ((-offset) as usize).div_ceil(stride)
    };
    let limit = in_len as isize - offset;
    let hi = if limit <= 0 {
        0
    } else {
        ((limit as usize).div_ceil(stride)).min(out_len)
    };
    (lo, hi.max(lo))
}

impl Conv2d {
    pub fn new<R: Rng>(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        rng: &mut R,
    ) -> Result<Self> {
        if in_ch == 0 || out_ch == 0 {
            return Err(Error::invalid("conv2d needs at least one channel"));
        }
        if kernel.0 == 0 || kernel.1 == 0 || stride.0 == 0 || stride.1 == 0 {
            return Err(Error::invalid(format!(
                "conv2d kernel {kernel:?} and stride {stride:?} must be positive"
            )));
        }
        let area = kernel.0 * kernel.1;
        Ok(Conv2d {
            weight: Param::xavier(
                format!("{name}.weight"),
                &[out_ch, in_ch, kernel.0, kernel.1],
                in_ch * area,
                out_ch * area,
                rng,
            ),
            bias: Param::zeros(format!("{name}.bias"), &[out_ch]),
            kernel,
            stride,
            input: None,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn output_extent(&self, h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(self.stride.0), w.div_ceil(self.stride.1))
    }

    fn dims(&self, input: &Tensor) -> Result<(usize, usize, usize)> {
        input.expect_rank(3, "conv2d")?;
        let s = input.shape();
        if s[0] != self.in_channels() {
            return Err(Error::shape(format!(
                "conv2d expects {} input channels, got {}",
                self.in_channels(),
                s[0]
            )));
        }
        if s[1] == 0 || s[2] == 0 {
            return Err(Error::invalid(format!("conv2d input {s:?} is empty")));
        }
        Ok((s[0], s[1], s[2]))
    }
}

impl Parameterized for Conv2d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

impl Layer for Conv2d {
    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Result<Tensor> {
        let (c_in, h, w) = self.dims(input)?;
        let c_out = self.out_channels();
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ho, wo) = self.output_extent(h, w);
        let (ph, pw) = (((kh - 1) / 2) as isize, ((kw - 1) / 2) as isize);

        let x = input.data();
        let wt = self.weight.value.data();
        let mut out = vec![0.0; c_out * ho * wo];
        for o in 0..c_out {
            let plane = &mut out[o * ho * wo..(o + 1) * ho * wo];
            plane.fill(self.bias.value.data()[o]);
            for c in 0..c_in {
                let xin = &x[c * h * w..(c + 1) * h * w];
                for i in 0..kh {
                    let (ylo, yhi) = valid_range(ho, h, sh, i as isize - ph);
                    for j in 0..kw {
                        let wv = wt[((o * c_in + c) * kh + i) * kw + j];
                        let (xlo, xhi) = valid_range(wo, w, sw, j as isize - pw);
                        for y in ylo..yhi {
                            let iy = (y * sh + i) as isize - ph;
                            let src = &xin[iy as usize * w..];
                            let dst = &mut plane[y * wo..(y + 1) * wo];
                            for xo in xlo..xhi {
                                let ix = (xo * sw + j) as isize - pw;
                                dst[xo] += wv * src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        self.input = Some(input.clone());
        Tensor::new(vec![c_out, ho, wo], out)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let input = self.input.as_ref().ok_or_else(no_cache)?;
        let (c_in, h, w) = self.dims(input)?;
        let c_out = self.out_channels();
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ho, wo) = self.output_extent(h, w);
        if grad_out.shape() != [c_out, ho, wo] {
            return Err(Error::shape(format!(
                "conv2d grad {:?} does not match output [{c_out}, {ho}, {wo}]",
                grad_out.shape()
            )));
        }
        let (ph, pw) = (((kh - 1) / 2) as isize, ((kw - 1) / 2) as isize);

        let x = input.data();
        let dy = grad_out.data();
        let wt = self.weight.value.data();
        let wg = self.weight.grad.data_mut();
        let mut dx = vec![0.0; c_in * h * w];
        for o in 0..c_out {
            let gplane = &dy[o * ho * wo..(o + 1) * ho * wo];
            self.bias.grad.data_mut()[o] += gplane.iter().sum::<f64>();
            for c in 0..c_in {
                let xin = &x[c * h * w..(c + 1) * h * w];
                let dxin = &mut dx[c * h * w..(c + 1) * h * w];
                for i in 0..kh {
                    let (ylo, yhi) = valid_range(ho, h, sh, i as isize - ph);
                    for j in 0..kw {
                        let widx = ((o * c_in + c) * kh + i) * kw + j;
                        let wv = wt[widx];
                        let (xlo, xhi) = valid_range(wo, w, sw, j as isize - pw);
                        let mut acc = 0.0;
                        for y in ylo..yhi {
                            let iy = ((y * sh + i) as isize - ph) as usize;
                            let g = &gplane[y * wo..(y + 1) * wo];
                            for xo in xlo..xhi {
                                let ix = ((xo * sw + j) as isize - pw) as usize;
                                acc += g[xo] * xin[iy * w + ix];
                                dxin[iy * w + ix] += g[xo] * wv;
                            }
                        }
                        wg[widx] += acc;
                    }
                }
            }
        }
        Tensor::new(vec![c_in, h, w], dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_kernel_copies_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv = Conv2d::new("c", 1, 1, (1, 1), (1, 1), &mut rng).unwrap();
        conv.weight.value.data_mut()[0] = 1.0;
        let x = Tensor::new(vec![1, 3, 4], (0..12).map(|v| v as f64 - 5.0).collect()).unwrap();
        assert_eq!(conv.forward(&x, Mode::Eval).unwrap(), x);
    }

    #[test]
    fn stride_two_takes_ceiling() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv = Conv2d::new("c", 2, 3, (3, 5), (2, 2), &mut rng).unwrap();
        let x = Tensor::filled(&[2, 5, 7], 0.3);
        let y = conv.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.shape(), &[3, 3, 4]);
    }

    #[test]
    fn bad_config_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(Conv2d::new("c", 1, 1, (0, 3), (1, 1), &mut rng).is_err());
        assert!(Conv2d::new("c", 1, 1, (3, 3), (0, 1), &mut rng).is_err());
        let mut conv = Conv2d::new("c", 2, 1, (3, 3), (1, 1), &mut rng).unwrap();
        assert!(conv.forward(&Tensor::zeros(&[1, 4, 4]), Mode::Eval).is_err());
    }

    #[test]
    fn range_helper_matches_brute_force() {
        for out_len in 1..6 {
            for in_len in 1..9 {
                for stride in 1..3 {
                    for offset in -3isize..4 {
                        let (lo, hi) = valid_range(out_len, in_len, stride, offset);
                        let brute: Vec<usize> = (0..out_len)
                            .filter(|&p| {
                                let q = (p * stride) as isize + offset;
                                q >= 0 && q < in_len as isize
                            })
                            .collect();
                        let got: Vec<usize> = (lo..hi).collect();
                        assert_eq!(got, brute, "{out_len} {in_len} {stride} {offset}");
                    }
                }
            }
        }
    }
}
