use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::space::ArchSpec;
use crate::audio::FeatureMatrix;
use crate::ctc::{Alphabet, LogitMatrix};
use crate::error::{Error, Result};
use crate::nn::{
    BatchNorm2d, Blstm, Conv2d, Layer, Linear, MaxPool2d, Mode, Param, Parameterized, Relu, Tensor,
};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NASM";
pub const CHECKPOINT_VERSION: u8 = 1;

const POOL: (usize, usize) = (2, 2);

/// Output `(time, freq, channels)` after each block, or the reason the
/// architecture cannot process an input of this size.
pub fn propagate_shape(spec: &ArchSpec, frames: usize, feats: usize) -> Result<Vec<(usize, usize, usize)>, String> {
    if frames == 0 || feats == 0 {
        return Err(format!("input {frames}x{feats} is empty"));
    }
    let (mut t, mut f) = (frames, feats);
    let mut out = Vec::with_capacity(spec.blocks.len());
    for (i, b) in spec.blocks.iter().enumerate() {
        t = t.div_ceil(b.stride_height);
        f = f.div_ceil(b.stride_width);
        let mut c = b.num_filters;
        if b.maxpool {
            if t < POOL.0 || f < POOL.1 {
                return Err(format!(
                    "block {i}: {t}x{f} map is smaller than the {}x{} pool",
                    POOL.0, POOL.1
                ));
            }
            t = (t - POOL.0) / POOL.0 + 1;
            f = (f - POOL.1) / POOL.1 + 1;
        }
        if b.rnn {
            c = 1;
            f = 2 * spec.hidden;
        }
        out.push((t, f, c));
    }
    Ok(out)
}

/// Output frame count for an input of `frames`, if the spec is feasible.
pub fn output_frames(spec: &ArchSpec, frames: usize, feats: usize) -> Option<usize> {
    let shapes = propagate_shape(spec, frames, feats).ok()?;
    Some(shapes.last().map_or(frames, |s| s.0))
}

/// `[C, T, F]` -> `[T, C * F]`.
fn to_sequence(x: &Tensor) -> Result<Tensor> {
    let (c, t, f) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for ci in 0..c {
        for ti in 0..t {
            let s = &src[(ci * t + ti) * f..(ci * t + ti + 1) * f];
            out[ti * c * f + ci * f..ti * c * f + (ci + 1) * f].copy_from_slice(s);
        }
    }
    Tensor::new(vec![t, c * f], out)
}

/// Inverse of [`to_sequence`].
fn from_sequence(x: &Tensor, c: usize) -> Result<Tensor> {
    let (t, cf) = (x.shape()[0], x.shape()[1]);
    let f = cf / c;
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for ci in 0..c {
        for ti in 0..t {
            out[(ci * t + ti) * f..(ci * t + ti + 1) * f]
                .copy_from_slice(&src[ti * cf + ci * f..ti * cf + (ci + 1) * f]);
        }
    }
    Tensor::new(vec![c, t, f], out)
}

#[derive(Clone, Debug)]
struct Block {
    conv: Conv2d,
    bn: Option<BatchNorm2d>,
    relu: Relu,
    pool: Option<MaxPool2d>,
    rnn: Option<Blstm>,
    /// channel count entering the RNN, for the reverse reshape
    rnn_channels: usize,
}

impl Block {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut y = self.conv.forward(x, mode)?;
        if let Some(bn) = &mut self.bn {
            y = bn.forward(&y, mode)?;
        }
        y = self.relu.forward(&y, mode)?;
        if let Some(pool) = &mut self.pool {
            y = pool.forward(&y, mode)?;
        }
        if let Some(rnn) = &mut self.rnn {
            self.rnn_channels = y.shape()[0];
            let seq = rnn.forward(&to_sequence(&y)?, mode)?;
            let (t, w) = (seq.shape()[0], seq.shape()[1]);
            y = seq.reshape(vec![1, t, w])?;
        }
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let mut g = dy.clone();
        if let Some(rnn) = &mut self.rnn {
            let (t, w) = (g.shape()[1], g.shape()[2]);
            let dseq = rnn.backward(&g.reshape(vec![t, w])?)?;
            g = from_sequence(&dseq, self.rnn_channels)?;
        }
        if let Some(pool) = &mut self.pool {
            g = pool.backward(&g)?;
        }
        g = self.relu.backward(&g)?;
        if let Some(bn) = &mut self.bn {
            g = bn.backward(&g)?;
        }
        self.conv.backward(&g)
    }

    fn params(&self) -> Vec<&Param> {
        let mut v = self.conv.params();
        if let Some(bn) = &self.bn {
            v.extend(bn.params());
        }
        if let Some(rnn) = &self.rnn {
            v.extend(rnn.params());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.conv.params_mut();
        if let Some(bn) = &mut self.bn {
            v.extend(bn.params_mut());
        }
        if let Some(rnn) = &mut self.rnn {
            v.extend(rnn.params_mut());
        }
        v
    }
}

/// A trainable network built from an [`ArchSpec`].
#[derive(Clone, Debug)]
pub struct ChildNetwork {
    spec: ArchSpec,
    n_feats: usize,
    alphabet: Alphabet,
    blocks: Vec<Block>,
    head_rnn: Blstm,
    head_out: Linear,
    head_channels: usize,
}

/// Outcome of building a child: a network, or a spec that cannot produce
/// output for the given input size.
#[derive(Clone, Debug)]
pub enum Instantiated {
    Network(Box<ChildNetwork>),
    Infeasible { reason: String },
}

impl Instantiated {
    pub fn network(self) -> Option<ChildNetwork> {
        match self {
            Instantiated::Network(n) => Some(*n),
            Instantiated::Infeasible { .. } => None,
        }
    }
}

/// Builds the layers of `spec` for inputs of `n_feats` features, checking
/// that an input of `min_frames` frames still yields at least one frame.
pub fn instantiate_child(
    spec: &ArchSpec,
    min_frames: usize,
    n_feats: usize,
    alphabet: &Alphabet,
    seed: u64,
) -> Result<Instantiated> {
    if spec.blocks.is_empty() || spec.hidden == 0 {
        return Err(Error::invalid("architecture needs at least one block and a positive width"));
    }
    let shapes = match propagate_shape(spec, min_frames, n_feats) {
        Ok(s) => s,
        Err(reason) => return Ok(Instantiated::Infeasible { reason }),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocks = Vec::with_capacity(spec.blocks.len());
    let mut in_ch = 1;
    let mut f = n_feats;
    for (i, b) in spec.blocks.iter().enumerate() {
        let name = format!("block{i}");
        let conv = Conv2d::new(
            &format!("{name}.conv"),
            in_ch,
            b.num_filters,
            (b.filter_height, b.filter_width),
            (b.stride_height, b.stride_width),
            &mut rng,
        )?;
        let bn = b
            .batchnorm
            .then(|| BatchNorm2d::new(&format!("{name}.bn"), b.num_filters));
        let pool = if b.maxpool {
            Some(MaxPool2d::new(POOL, POOL)?)
        } else {
            None
        };
        // frequency extent entering the optional RNN
        let mut rf = f.div_ceil(b.stride_width);
        if b.maxpool {
            rf = (rf - POOL.1) / POOL.1 + 1;
        }
        let rnn = b.rnn.then(|| {
            Blstm::new(&format!("{name}.rnn"), b.num_filters * rf, spec.hidden, &mut rng)
        });
        let (_, out_f, out_c) = shapes[i];
        blocks.push(Block {
            conv,
            bn,
            relu: Relu::new(),
            pool,
            rnn,
            rnn_channels: b.num_filters,
        });
        in_ch = out_c;
        f = out_f;
    }
    let head_rnn = Blstm::new("head.rnn", in_ch * f, spec.hidden, &mut rng);
    let head_out = Linear::new("head.out", 2 * spec.hidden, alphabet.n_labels(), &mut rng);
    Ok(Instantiated::Network(Box::new(ChildNetwork {
        spec: spec.clone(),
        n_feats,
        alphabet: alphabet.clone(),
        blocks,
        head_rnn,
        head_out,
        head_channels: in_ch,
    })))
}

impl ChildNetwork {
    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn n_feats(&self) -> usize {
        self.n_feats
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn output_frames(&self, frames: usize) -> Option<usize> {
        output_frames(&self.spec, frames, self.n_feats)
    }

    /// Pre-softmax activations `[T', |alphabet| + 1]`.
    pub fn forward(&mut self, feats: &FeatureMatrix, mode: Mode) -> Result<Tensor> {
        if feats.n_feats() != self.n_feats {
            return Err(Error::shape(format!(
                "network expects {} features, got {}",
                self.n_feats,
                feats.n_feats()
            )));
        }
        if self.output_frames(feats.n_frames()).is_none() {
            return Err(Error::invalid(format!(
                "{} frames are too few for architecture {}",
                feats.n_frames(),
                self.spec
            )));
        }
        let data = feats.data().iter().map(|&v| v as f64).collect();
        let mut x = Tensor::new(vec![1, feats.n_frames(), self.n_feats], data)?;
        for b in &mut self.blocks {
            x = b.forward(&x, mode)?;
        }
        let seq = self.head_rnn.forward(&to_sequence(&x)?, mode)?;
        self.head_out.forward(&seq, mode)
    }

    /// Backpropagates a gradient w.r.t. the activations of the last
    /// `forward`, accumulating parameter gradients.
    pub fn backward(&mut self, grad: &Tensor) -> Result<()> {
        let g = self.head_out.backward(grad)?;
        let g = self.head_rnn.backward(&g)?;
        let mut g = from_sequence(&g, self.head_channels)?;
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(&g)?;
        }
        Ok(())
    }

    /// Log-posteriors in inference mode.
    pub fn logits(&mut self, feats: &FeatureMatrix) -> Result<LogitMatrix> {
        LogitMatrix::from_activations(&self.forward(feats, Mode::Eval)?)
    }

    fn buffers(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            if let Some(bn) = &b.bn {
                for (name, t) in bn.buffers() {
                    out.push((format!("block{i}.bn.{name}"), t));
                }
            }
        }
        out
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            if let Some(bn) = &mut b.bn {
                for (name, t) in bn.buffers_mut() {
                    out.push((format!("block{i}.bn.{name}"), t));
                }
            }
        }
        out
    }

    /// Every parameter and buffer, by name.
    pub fn state(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> =
            self.params().into_iter().map(|p| (p.name.clone(), &p.value)).collect();
        out.extend(self.buffers());
        out
    }

    /// Copies parameter values and buffers from a network of the same
    /// architecture.
    pub fn copy_state_from(&mut self, other: &ChildNetwork) -> Result<()> {
        if self.spec != other.spec || self.n_feats != other.n_feats {
            return Err(Error::invalid("cannot copy state between different architectures"));
        }
        for (dst, src) in self.params_mut().into_iter().zip(other.params()) {
            dst.value = src.value.clone();
        }
        for ((_, dst), (_, src)) in self.buffers_mut().into_iter().zip(other.buffers()) {
            *dst = src.clone();
        }
        Ok(())
    }

    /// Binary checkpoint: `NASM`, version, architecture text, feature count,
    /// alphabet, then named f64 LE tensors.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        fn put_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
            w.write_all(&(s.len() as u32).to_le_bytes())?;
            w.write_all(s.as_bytes())?;
            Ok(())
        }
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&[CHECKPOINT_VERSION])?;
        put_str(&mut w, &self.spec.to_string())?;
        w.write_all(&(self.n_feats as u32).to_le_bytes())?;
        put_str(&mut w, &self.alphabet.symbols().iter().collect::<String>())?;
        let state = self.state();
        w.write_all(&(state.len() as u32).to_le_bytes())?;
        for (name, t) in state {
            put_str(&mut w, &name)?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(t.len() * 8);
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<ChildNetwork> {
        fn u32_of<R: Read>(r: &mut R) -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b))
        }
        fn str_of<R: Read>(r: &mut R) -> Result<String> {
            let n = u32_of(r)? as usize;
            if n > 1 << 20 {
                return Err(Error::invalid("checkpoint: string too long"));
            }
            let mut b = vec![0u8; n];
            r.read_exact(&mut b)?;
            String::from_utf8(b).map_err(|_| Error::invalid("checkpoint: string is not UTF-8"))
        }
        let mut head = [0u8; 5];
        r.read_exact(&mut head)?;
        if &head[..4] != CHECKPOINT_MAGIC {
            return Err(Error::invalid("checkpoint: bad magic"));
        }
        if head[4] != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!("checkpoint: unsupported version {}", head[4])));
        }
        let spec: ArchSpec = str_of(&mut r)?.parse()?;
        let n_feats = u32_of(&mut r)? as usize;
        let alphabet = Alphabet::new(str_of(&mut r)?.chars())?;
        let mut net = match instantiate_child(&spec, 1 << 16, n_feats, &alphabet, 0)? {
            Instantiated::Network(n) => *n,
            Instantiated::Infeasible { reason } => {
                return Err(Error::invalid(format!("checkpoint: {reason}")))
            }
        };
        let count = u32_of(&mut r)? as usize;
        let mut blobs: Vec<(String, Tensor)> = Vec::with_capacity(count);
        for _ in 0..count {
            let name = str_of(&mut r)?;
            let rank = u32_of(&mut r)? as usize;
            if rank > 8 {
                return Err(Error::invalid(format!("checkpoint: {name} has rank {rank}")));
            }
            let shape = (0..rank)
                .map(|_| u32_of(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let mut raw = vec![0u8; n * 8];
            r.read_exact(&mut raw)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            blobs.push((name, Tensor::new(shape, data)?));
        }
        {
            let mut slots: Vec<(String, &mut Tensor)> = net
                .params_mut()
                .into_iter()
                .map(|p| (p.name.clone(), &mut p.value))
                .collect();
            // buffers are borrowed separately below
            if slots.len() > blobs.len() {
                return Err(Error::invalid("checkpoint: missing tensors"));
            }
            for ((name, slot), (bname, blob)) in slots.iter_mut().zip(&blobs) {
                if name != bname || slot.shape() != blob.shape() {
                    return Err(Error::invalid(format!(
                        "checkpoint: expected {name} {:?}, found {bname} {:?}",
                        slot.shape(),
                        blob.shape()
                    )));
                }
                **slot = blob.clone();
            }
        }
        let n_params = net.params().len();
        let buffers = net.buffers_mut();
        if n_params + buffers.len() != blobs.len() {
            return Err(Error::invalid(format!(
                "checkpoint: expected {} tensors, found {}",
                n_params + buffers.len(),
                blobs.len()
            )));
        }
        for ((name, slot), (bname, blob)) in buffers.into_iter().zip(&blobs[n_params..]) {
            if &name != bname || slot.shape() != blob.shape() {
                return Err(Error::invalid(format!("checkpoint: expected {name}, found {bname}")));
            }
            *slot = blob.clone();
        }
        Ok(net)
    }
}

impl Parameterized for ChildNetwork {
    fn params(&self) -> Vec<&Param> {
        let mut v: Vec<&Param> = self.blocks.iter().flat_map(|b| b.params()).collect();
        v.extend(self.head_rnn.params());
        v.extend(self.head_out.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = self.blocks.iter_mut().flat_map(|b| b.params_mut()).collect();
        v.extend(self.head_rnn.params_mut());
        v.extend(self.head_out.params_mut());
        v
    }
}
