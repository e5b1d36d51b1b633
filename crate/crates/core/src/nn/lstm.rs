use rand::Rng;

use super::{matvec_acc, matvec_backward, no_cache, Layer, Mode, Param, Parameterized, Tensor};
use crate::error::{Error, Result};

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Weights of one LSTM cell with separate input and recurrent matrices
/// per gate:
///
/// ```text
/// i = sigmoid(W_xi x + W_hi h + b_i)
/// f = sigmoid(W_xf x + W_hf h + b_f)
/// o = sigmoid(W_xo x + W_ho h + b_o)
/// c' = f * c + i * tanh(W_xc x + W_hc h + b_c)
/// h' = o * tanh(c')
/// ```
#[derive(Clone, Debug)]
pub struct LstmCellParams {
    pub w_xi: Param,
    pub w_hi: Param,
    pub w_xf: Param,
    pub w_hf: Param,
    pub w_xo: Param,
    pub w_ho: Param,
    pub w_xc: Param,
    pub w_hc: Param,
    pub b_i: Param,
    pub b_f: Param,
    pub b_o: Param,
    pub b_c: Param,
}

/// Everything the reverse pass of one step needs.
#[derive(Clone, Debug)]
pub struct LstmStepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub g: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

impl LstmCellParams {
    /// Glorot-uniform weights, zero biases except the forget gate at +1.
    pub fn new<R: Rng>(prefix: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let wx = |gate: &str, rng: &mut R| {
            Param::xavier(format!("{prefix}.w_x{gate}"), &[hidden, input], input, hidden, rng)
        };
        let (w_xi, w_xf, w_xo, w_xc) = (wx("i", rng), wx("f", rng), wx("o", rng), wx("c", rng));
        let wh = |gate: &str, rng: &mut R| {
            Param::xavier(format!("{prefix}.w_h{gate}"), &[hidden, hidden], hidden, hidden, rng)
        };
        let (w_hi, w_hf, w_ho, w_hc) = (wh("i", rng), wh("f", rng), wh("o", rng), wh("c", rng));
        LstmCellParams {
            w_xi,
            w_hi,
            w_xf,
            w_hf,
            w_xo,
            w_ho,
            w_xc,
            w_hc,
            b_i: Param::zeros(format!("{prefix}.b_i"), &[hidden]),
            b_f: Param::new(format!("{prefix}.b_f"), Tensor::filled(&[hidden], 1.0)),
            b_o: Param::zeros(format!("{prefix}.b_o"), &[hidden]),
            b_c: Param::zeros(format!("{prefix}.b_c"), &[hidden]),
        }
    }

    pub fn zeros(prefix: &str, input: usize, hidden: usize) -> Self {
        let wx = |g: &str| Param::zeros(format!("{prefix}.w_x{g}"), &[hidden, input]);
        let wh = |g: &str| Param::zeros(format!("{prefix}.w_h{g}"), &[hidden, hidden]);
        let b = |g: &str| Param::zeros(format!("{prefix}.b_{g}"), &[hidden]);
        LstmCellParams {
            w_xi: wx("i"),
            w_hi: wh("i"),
            w_xf: wx("f"),
            w_hf: wh("f"),
            w_xo: wx("o"),
            w_ho: wh("o"),
            w_xc: wx("c"),
            w_hc: wh("c"),
            b_i: b("i"),
            b_f: b("f"),
            b_o: b("o"),
            b_c: b("c"),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_xi.value.shape()[1]
    }

    pub fn hidden_size(&self) -> usize {
        self.w_xi.value.shape()[0]
    }

    fn check(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<()> {
        let (d, h) = (self.input_size(), self.hidden_size());
        for p in [&self.w_xi, &self.w_xf, &self.w_xo, &self.w_xc] {
            if p.value.shape() != [h, d] {
                return Err(Error::shape(format!("{} is not {h}x{d}", p.name)));
            }
        }
        for p in [&self.w_hi, &self.w_hf, &self.w_ho, &self.w_hc] {
            if p.value.shape() != [h, h] {
                return Err(Error::shape(format!("{} is not {h}x{h}", p.name)));
            }
        }
        for p in [&self.b_i, &self.b_f, &self.b_o, &self.b_c] {
            if p.value.shape() != [h] {
                return Err(Error::shape(format!("{} is not length {h}", p.name)));
            }
        }
        if x.len() != d || h_prev.len() != h || c_prev.len() != h {
            return Err(Error::shape(format!(
                "lstm step expects x[{d}], h[{h}], c[{h}]; got x[{}], h[{}], c[{}]",
                x.len(),
                h_prev.len(),
                c_prev.len()
            )));
        }
        Ok(())
    }

    fn preact(&self, wx: &Param, wh: &Param, b: &Param, x: &[f64], h: &[f64]) -> Vec<f64> {
        let mut a = b.value.data().to_vec();
        matvec_acc(wx.value.data(), x, &mut a);
        matvec_acc(wh.value.data(), h, &mut a);
        a
    }

    pub fn step_cached(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<LstmStepCache> {
        self.check(x, h_prev, c_prev)?;
        let mut i = self.preact(&self.w_xi, &self.w_hi, &self.b_i, x, h_prev);
        let mut f = self.preact(&self.w_xf, &self.w_hf, &self.b_f, x, h_prev);
        let mut o = self.preact(&self.w_xo, &self.w_ho, &self.b_o, x, h_prev);
        let mut g = self.preact(&self.w_xc, &self.w_hc, &self.b_c, x, h_prev);
        i.iter_mut().for_each(|v| *v = sigmoid(*v));
        f.iter_mut().for_each(|v| *v = sigmoid(*v));
        o.iter_mut().for_each(|v| *v = sigmoid(*v));
        g.iter_mut().for_each(|v| *v = v.tanh());
        let c: Vec<f64> = (0..i.len()).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
        let h = c.iter().zip(&o).map(|(c, o)| o * c.tanh()).collect();
        Ok(LstmStepCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            i,
            f,
            o,
            g,
            c,
            h,
        })
    }

    /// Reverse pass of one step. Accumulates weight gradients and returns
    /// `(dx, dh_prev, dc_prev)`.
    pub fn step_backward(
        &mut self,
        cache: &LstmStepCache,
        dh: &[f64],
        dc: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = cache.h.len();
        let mut da_i = vec![0.0; n];
        let mut da_f = vec![0.0; n];
        let mut da_o = vec![0.0; n];
        let mut da_g = vec![0.0; n];
        let mut dc_prev = vec![0.0; n];
        for k in 0..n {
            let tc = cache.c[k].tanh();
            let dct = dc[k] + dh[k] * cache.o[k] * (1.0 - tc * tc);
            let (i, f, o, g) = (cache.i[k], cache.f[k], cache.o[k], cache.g[k]);
            da_o[k] = dh[k] * tc * o * (1.0 - o);
            da_i[k] = dct * g * i * (1.0 - i);
            da_f[k] = dct * cache.c_prev[k] * f * (1.0 - f);
            da_g[k] = dct * i * (1.0 - g * g);
            dc_prev[k] = dct * f;
        }

        let mut dx = vec![0.0; cache.x.len()];
        let mut dh_prev = vec![0.0; n];
        let gates = [
            (&mut self.w_xi, &mut self.w_hi, &mut self.b_i, &da_i),
            (&mut self.w_xf, &mut self.w_hf, &mut self.b_f, &da_f),
            (&mut self.w_xo, &mut self.w_ho, &mut self.b_o, &da_o),
            (&mut self.w_xc, &mut self.w_hc, &mut self.b_c, &da_g),
        ];
        for (wx, wh, b, da) in gates {
            for (bg, d) in b.grad.data_mut().iter_mut().zip(da.iter()) {
                *bg += d;
            }
            matvec_backward(wx.value.data(), wx.grad.data_mut(), &cache.x, da, &mut dx);
            matvec_backward(wh.value.data(), wh.grad.data_mut(), &cache.h_prev, da, &mut dh_prev);
        }
        (dx, dh_prev, dc_prev)
    }

    /// Runs a whole sequence from the zero state.
    pub fn run(&self, seq: &[&[f64]]) -> Result<LstmCache> {
        let h = self.hidden_size();
        let mut steps: Vec<LstmStepCache> = Vec::with_capacity(seq.len());
        let (mut hp, mut cp) = (vec![0.0; h], vec![0.0; h]);
        for x in seq {
            let step = self.step_cached(x, &hp, &cp)?;
            hp.clone_from(&step.h);
            cp.clone_from(&step.c);
            steps.push(step);
        }
        Ok(LstmCache { steps })
    }

    /// BPTT over a cached run given per-step hidden-state gradients.
    /// Returns per-step input gradients.
    pub fn run_backward(&mut self, cache: &LstmCache, dhs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let h = self.hidden_size();
        let mut dxs = vec![Vec::new(); cache.steps.len()];
        let (mut dh_next, mut dc_next) = (vec![0.0; h], vec![0.0; h]);
        for t in (0..cache.steps.len()).rev() {
            let dh: Vec<f64> = dhs[t].iter().zip(&dh_next).map(|(a, b)| a + b).collect();
            let (dx, dhp, dcp) = self.step_backward(&cache.steps[t], &dh, &dc_next);
            dxs[t] = dx;
            dh_next = dhp;
            dc_next = dcp;
        }
        dxs
    }
}

impl Parameterized for LstmCellParams {
    fn params(&self) -> Vec<&Param> {
        vec![
            &self.w_xi, &self.w_hi, &self.w_xf, &self.w_hf, &self.w_xo, &self.w_ho, &self.w_xc,
            &self.w_hc, &self.b_i, &self.b_f, &self.b_o, &self.b_c,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.w_xi,
            &mut self.w_hi,
            &mut self.w_xf,
            &mut self.w_hf,
            &mut self.w_xo,
            &mut self.w_ho,
            &mut self.w_xc,
            &mut self.w_hc,
            &mut self.b_i,
            &mut self.b_f,
            &mut self.b_o,
            &mut self.b_c,
        ]
    }
}

#[derive(Clone, Debug, Default)]
pub struct LstmCache {
    pub steps: Vec<LstmStepCache>,
}

/// One LSTM step, returning `(h_t, c_t)`.
pub fn lstm_step(
    params: &LstmCellParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let s = params.step_cached(x, h_prev, c_prev)?;
    Ok((s.h, s.c))
}

/// Bidirectional LSTM over `[T, D]`, emitting `[T, 2H]` with the forward
/// state first in each row.
#[derive(Clone, Debug)]
pub struct Blstm {
    pub fwd: LstmCellParams,
    pub bwd: LstmCellParams,
    cache: Option<(LstmCache, LstmCache)>,
}

impl Blstm {
    pub fn new<R: Rng>(name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        Blstm {
            fwd: LstmCellParams::new(&format!("{name}.fwd"), input, hidden, rng),
            bwd: LstmCellParams::new(&format!("{name}.bwd"), input, hidden, rng),
            cache: None,
        }
    }

    pub fn from_params(fwd: LstmCellParams, bwd: LstmCellParams) -> Self {
        Blstm {
            fwd,
            bwd,
            cache: None,
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.fwd.hidden_size()
    }

    pub fn input_size(&self) -> usize {
        self.fwd.input_size()
    }
}

impl Parameterized for Blstm {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.fwd.params();
        v.extend(self.bwd.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.fwd.params_mut();
        v.extend(self.bwd.params_mut());
        v
    }
}

impl Layer for Blstm {
    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Result<Tensor> {
        input.expect_rank(2, "blstm")?;
        let t_len = input.shape()[0];
        if t_len == 0 {
            return Err(Error::invalid("blstm input sequence is empty"));
        }
        let rows: Vec<&[f64]> = (0..t_len).map(|t| input.row(t)).collect();
        let rev: Vec<&[f64]> = rows.iter().rev().copied().collect();
        let f = self.fwd.run(&rows)?;
        let b = self.bwd.run(&rev)?;
        let h = self.hidden_size();
        let mut out = Tensor::zeros(&[t_len, 2 * h]);
        for t in 0..t_len {
            let row = out.row_mut(t);
            row[..h].copy_from_slice(&f.steps[t].h);
            row[h..].copy_from_slice(&b.steps[t_len - 1 - t].h);
        }
        self.cache = Some((f, b));
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let (f, b) = self.cache.take().ok_or_else(no_cache)?;
        let t_len = f.steps.len();
        let h = self.hidden_size();
        if grad_out.shape() != [t_len, 2 * h] {
            self.cache = Some((f, b));
            return Err(Error::shape("blstm grad does not match cached output"));
        }
        let dh_f: Vec<Vec<f64>> = (0..t_len).map(|t| grad_out.row(t)[..h].to_vec()).collect();
        let dh_b: Vec<Vec<f64>> = (0..t_len)
            .map(|k| grad_out.row(t_len - 1 - k)[h..].to_vec())
            .collect();
        let dx_f = self.fwd.run_backward(&f, &dh_f);
        let dx_b = self.bwd.run_backward(&b, &dh_b);
        let d = self.input_size();
        let mut dx = Tensor::zeros(&[t_len, d]);
        for t in 0..t_len {
            let row = dx.row_mut(t);
            for ((r, a), b) in row.iter_mut().zip(&dx_f[t]).zip(&dx_b[t_len - 1 - t]) {
                *r = a + b;
            }
        }
        self.cache = Some((f, b));
        Ok(dx)
    }
}

/// Stateless bidirectional pass over `[T, D]`; see [`Blstm`].
pub fn blstm_forward(
    params_fwd: &LstmCellParams,
    params_bwd: &LstmCellParams,
    seq: &Tensor,
) -> Result<Tensor> {
    Blstm::from_params(params_fwd.clone(), params_bwd.clone()).forward(seq, Mode::Eval)
}
