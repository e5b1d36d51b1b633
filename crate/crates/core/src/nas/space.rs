use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Recurrent width used when an architecture string leaves it out.
pub const DEFAULT_HIDDEN: usize = 32;

/// One categorical choice the controller makes. Every block emits the
/// per-block kinds in the order of [`DecisionKind::BLOCK`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionKind {
    Depth,
    NumFilters,
    FilterHeight,
    FilterWidth,
    StrideHeight,
    StrideWidth,
    MaxPool,
    BatchNorm,
    Rnn,
}

impl DecisionKind {
    pub const ALL: [DecisionKind; 9] = [
        DecisionKind::Depth,
        DecisionKind::NumFilters,
        DecisionKind::FilterHeight,
        DecisionKind::FilterWidth,
        DecisionKind::StrideHeight,
        DecisionKind::StrideWidth,
        DecisionKind::MaxPool,
        DecisionKind::BatchNorm,
        DecisionKind::Rnn,
    ];

    pub const BLOCK: [DecisionKind; 8] = [
        DecisionKind::NumFilters,
        DecisionKind::FilterHeight,
        DecisionKind::FilterWidth,
        DecisionKind::StrideHeight,
        DecisionKind::StrideWidth,
        DecisionKind::MaxPool,
        DecisionKind::BatchNorm,
        DecisionKind::Rnn,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Choice lists for every decision. Flags are listed as `0`/`1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub max_blocks: usize,
    pub num_filters: Vec<usize>,
    pub filter_height: Vec<usize>,
    pub filter_width: Vec<usize>,
    pub stride_height: Vec<usize>,
    pub stride_width: Vec<usize>,
    pub maxpool: Vec<usize>,
    pub batchnorm: Vec<usize>,
    pub rnn: Vec<usize>,
    /// Recurrent width of RNN blocks and the output head (not searched).
    pub hidden: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            max_blocks: 4,
            num_filters: vec![8, 16, 32, 64],
            filter_height: vec![1, 3, 5, 7],
            filter_width: vec![1, 3, 5, 7],
            stride_height: vec![1, 2],
            stride_width: vec![1, 2],
            maxpool: vec![0, 1],
            batchnorm: vec![0, 1],
            rnn: vec![0, 1],
            hidden: DEFAULT_HIDDEN,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.max_blocks == 0 {
            return Err(Error::invalid("max_blocks must be at least 1"));
        }
        if self.hidden == 0 {
            return Err(Error::invalid("hidden width must be at least 1"));
        }
        for kind in DecisionKind::BLOCK {
            let list = self.choices(kind);
            if list.is_empty() {
                return Err(Error::invalid(format!("{kind:?} has no choices")));
            }
            let positive = !matches!(
                kind,
                DecisionKind::MaxPool | DecisionKind::BatchNorm | DecisionKind::Rnn
            );
            if list.iter().any(|&v| if positive { v == 0 } else { v > 1 }) {
                return Err(Error::invalid(format!("{kind:?} has an out-of-range choice")));
            }
            for (i, v) in list.iter().enumerate() {
                if list[..i].contains(v) {
                    return Err(Error::invalid(format!("{kind:?} repeats choice {v}")));
                }
            }
        }
        Ok(())
    }

    /// Values available to a decision; depth ranges over `1..=max_blocks`.
    pub fn choices(&self, kind: DecisionKind) -> Vec<usize> {
        match kind {
            DecisionKind::Depth => (1..=self.max_blocks).collect(),
            DecisionKind::NumFilters => self.num_filters.clone(),
            DecisionKind::FilterHeight => self.filter_height.clone(),
            DecisionKind::FilterWidth => self.filter_width.clone(),
            DecisionKind::StrideHeight => self.stride_height.clone(),
            DecisionKind::StrideWidth => self.stride_width.clone(),
            DecisionKind::MaxPool => self.maxpool.clone(),
            DecisionKind::BatchNorm => self.batchnorm.clone(),
            DecisionKind::Rnn => self.rnn.clone(),
        }
    }

    pub fn n_choices(&self, kind: DecisionKind) -> usize {
        match kind {
            DecisionKind::Depth => self.max_blocks,
            k => self.choices(k).len(),
        }
    }

    /// Number of distinct architectures in the space.
    pub fn size(&self) -> u128 {
        let per_block: u128 = DecisionKind::BLOCK
            .iter()
            .map(|&k| self.n_choices(k) as u128)
            .product();
        (1..=self.max_blocks as u32).map(|d| per_block.pow(d)).sum()
    }

    /// Builds the spec selected by `indices` (depth first, then eight per
    /// block).
    pub fn decode(&self, indices: &[usize]) -> Result<ArchSpec> {
        let (&d, rest) = indices
            .split_first()
            .ok_or_else(|| Error::invalid("decision list is empty"))?;
        let depth = *self
            .choices(DecisionKind::Depth)
            .get(d)
            .ok_or_else(|| Error::invalid(format!("depth index {d} out of range")))?;
        if rest.len() != depth * DecisionKind::BLOCK.len() {
            return Err(Error::invalid(format!(
                "depth {depth} needs {} block decisions, got {}",
                depth * DecisionKind::BLOCK.len(),
                rest.len()
            )));
        }
        let mut blocks = Vec::with_capacity(depth);
        for chunk in rest.chunks(DecisionKind::BLOCK.len()) {
            let mut v = [0usize; 8];
            for ((slot, &kind), &i) in v.iter_mut().zip(&DecisionKind::BLOCK).zip(chunk) {
                *slot = *self.choices(kind).get(i).ok_or_else(|| {
                    Error::invalid(format!("{kind:?} index {i} out of range"))
                })?;
            }
            blocks.push(BlockSpec {
                num_filters: v[0],
                filter_height: v[1],
                filter_width: v[2],
                stride_height: v[3],
                stride_width: v[4],
                maxpool: v[5] == 1,
                batchnorm: v[6] == 1,
                rnn: v[7] == 1,
            });
        }
        Ok(ArchSpec {
            blocks,
            hidden: self.hidden,
        })
    }

    /// Inverse of [`SearchSpace::decode`]; fails when a value is not offered.
    pub fn encode(&self, spec: &ArchSpec) -> Result<Vec<usize>> {
        let find = |kind: DecisionKind, v: usize| {
            self.choices(kind)
                .iter()
                .position(|&c| c == v)
                .ok_or_else(|| Error::invalid(format!("{kind:?} value {v} is not in the space")))
        };
        let mut out = vec![find(DecisionKind::Depth, spec.blocks.len())?];
        for b in &spec.blocks {
            for (kind, v) in DecisionKind::BLOCK.iter().zip(b.values()) {
                out.push(find(*kind, v)?);
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockSpec {
    pub num_filters: usize,
    pub filter_height: usize,
    pub filter_width: usize,
    pub stride_height: usize,
    pub stride_width: usize,
    pub maxpool: bool,
    pub batchnorm: bool,
    pub rnn: bool,
}

impl BlockSpec {
    fn values(&self) -> [usize; 8] {
        [
            self.num_filters,
            self.filter_height,
            self.filter_width,
            self.stride_height,
            self.stride_width,
            self.maxpool as usize,
            self.batchnorm as usize,
            self.rnn as usize,
        ]
    }
}

/// A child architecture: convolutional blocks followed by a BLSTM, a linear
/// layer and a softmax over the alphabet plus blank.
///
/// Text form: comma-separated tokens, eight per block in the order
/// `f<filters>,kh<h>,kw<w>,sh<h>,sw<w>,mp<0|1>,bn<0|1>,rnn<0|1>`, optionally
/// followed by `h<width>` for the recurrent width, e.g.
/// `f16,kh3,kw3,sh2,sw1,mp0,bn1,rnn0,h32`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchSpec {
    pub blocks: Vec<BlockSpec>,
    pub hidden: usize,
}

const PREFIXES: [&str; 8] = ["f", "kh", "kw", "sh", "sw", "mp", "bn", "rnn"];

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for b in &self.blocks {
            for (p, v) in PREFIXES.iter().zip(b.values()) {
                if !first {
                    f.write_str(",")?;
                }
                first = false;
                write!(f, "{p}{v}")?;
            }
        }
        write!(f, ",h{}", self.hidden)
    }
}

impl FromStr for ArchSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut blocks = Vec::new();
        let mut hidden = None;
        let mut current = [0usize; 8];
        let mut slot = 0;
        let mut column = 1;
        for raw in s.split(',') {
            let err = |msg: String| Error::Grammar { column, msg };
            let tok = raw.trim();
            if hidden.is_some() {
                return Err(err(format!("unexpected {tok:?} after the width token")));
            }
            let (prefix, digits) = tok.split_at(tok.find(|c: char| c.is_ascii_digit()).unwrap_or(tok.len()));
            if slot == 0 && prefix == "h" && !blocks.is_empty() {
                let v: usize = digits
                    .parse()
                    .map_err(|_| err(format!("bad width in {tok:?}")))?;
                if v == 0 {
                    return Err(err("width must be positive".into()));
                }
                hidden = Some(v);
            } else {
                let want = PREFIXES[slot];
                if prefix != want {
                    return Err(err(format!("expected {want}<n>, found {tok:?}")));
                }
                let v: usize = digits
                    .parse()
                    .map_err(|_| err(format!("bad number in {tok:?}")))?;
                let flag = slot >= 5;
                if (flag && v > 1) || (!flag && v == 0) {
                    return Err(err(format!("{tok:?} is out of range")));
                }
                current[slot] = v;
                slot += 1;
                if slot == PREFIXES.len() {
                    blocks.push(BlockSpec {
                        num_filters: current[0],
                        filter_height: current[1],
                        filter_width: current[2],
                        stride_height: current[3],
                        stride_width: current[4],
                        maxpool: current[5] == 1,
                        batchnorm: current[6] == 1,
                        rnn: current[7] == 1,
                    });
                    slot = 0;
                }
            }
            column += raw.chars().count() + 1;
        }
        if slot != 0 || blocks.is_empty() {
            return Err(Error::Grammar {
                column: s.chars().count() + 1,
                msg: if blocks.is_empty() && slot == 0 {
                    "no blocks".into()
                } else {
                    format!("block ends early; expected {}<n>", PREFIXES[slot])
                },
            });
        }
        Ok(ArchSpec {
            blocks,
            hidden: hidden.unwrap_or(DEFAULT_HIDDEN),
        })
    }
}
