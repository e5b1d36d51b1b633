//! Connectionist temporal classification: alignment collapse, exact loss by
//! forward-backward in log space, and a sampled estimate of the expected
//! transcription loss.

mod alphabet;
mod loss;
mod mc;

pub use alphabet::{Alphabet, LabelSequence};
pub use loss::{ctc_loss, forward_backward, min_frames, CtcLattice, CtcResult};
pub use mc::{ctc_loss_mc, sample_path, McEstimate};

use crate::error::{Error, Result};
use crate::nn::{log_softmax_rows, Tensor};

/// Stable `log(exp(a) + exp(b))`.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub fn log_sum_exp(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(f64::NEG_INFINITY, log_add)
}

/// Frame-level label sequence over the symbols plus blank.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AlignmentPath {
    ids: Vec<usize>,
    blank: usize,
}

impl AlignmentPath {
    pub fn new(ids: Vec<usize>, blank: usize) -> Result<Self> {
        if let Some(&bad) = ids.iter().find(|&&i| i > blank) {
            return Err(Error::invalid(format!(
                "path label {bad} is outside 0..={blank}"
            )));
        }
        Ok(AlignmentPath { ids, blank })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn blank(&self) -> usize {
        self.blank
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Merges adjacent repeats, then drops blanks.
pub fn collapse(path: &AlignmentPath) -> LabelSequence {
    collapse_ids(&path.ids, path.blank)
}

pub(crate) fn collapse_ids(ids: &[usize], blank: usize) -> LabelSequence {
    let mut out = Vec::new();
    let mut prev = None;
    for &id in ids {
        if Some(id) != prev && id != blank {
            out.push(id);
        }
        prev = Some(id);
    }
    LabelSequence::from_ids(out)
}

/// T x (|symbols| + 1) per-frame log posteriors; the last column is blank.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitMatrix {
    log_probs: Tensor,
}

impl LogitMatrix {
    /// Applies a row-wise log-softmax to raw network activations.
    pub fn from_activations(activations: &Tensor) -> Result<Self> {
        Self::check_shape(activations)?;
        Ok(LogitMatrix {
            log_probs: log_softmax_rows(activations)?,
        })
    }

    /// Wraps rows that already are log-probability distributions.
    pub fn from_log_probs(log_probs: Tensor) -> Result<Self> {
        Self::check_shape(&log_probs)?;
        for t in 0..log_probs.shape()[0] {
            let row = log_probs.row(t);
            if row.iter().any(|v| v.is_nan() || *v > 1e-9) {
                return Err(Error::invalid(format!("row {t} holds invalid log-probabilities")));
            }
            let total = log_sum_exp(row.iter().copied());
            if (total).abs() > 1e-6 {
                return Err(Error::invalid(format!(
                    "row {t} does not normalize (log-sum {total})"
                )));
            }
        }
        Ok(LogitMatrix { log_probs })
    }

    pub fn from_probs(probs: &Tensor) -> Result<Self> {
        let logs = probs.data().iter().map(|p| p.ln()).collect();
        Self::from_log_probs(Tensor::new(probs.shape().to_vec(), logs)?)
    }

    fn check_shape(t: &Tensor) -> Result<()> {
        t.expect_rank(2, "logit matrix")?;
        if t.shape()[0] == 0 || t.shape()[1] < 1 {
            return Err(Error::invalid(format!(
                "logit matrix {:?} needs at least one frame and a blank column",
                t.shape()
            )));
        }
        Ok(())
    }

    pub fn n_frames(&self) -> usize {
        self.log_probs.shape()[0]
    }

    /// Symbols plus blank.
    pub fn n_labels(&self) -> usize {
        self.log_probs.shape()[1]
    }

    pub fn blank(&self) -> usize {
        self.n_labels() - 1
    }

    pub fn log_prob(&self, t: usize, k: usize) -> f64 {
        self.log_probs.row(t)[k]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.log_probs.row(t)
    }

    pub fn log_probs(&self) -> &Tensor {
        &self.log_probs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(s: &str) -> AlignmentPath {
        // 'a' = 0, 'b' = 1, '-' = blank (2)
        let ids = s
            .chars()
            .map(|c| match c {
                '-' => 2,
                c => c as usize - 'a' as usize,
            })
            .collect();
        AlignmentPath::new(ids, 2).unwrap()
    }

    #[test]
    fn collapse_examples() {
        assert_eq!(collapse(&path("aa-b")).ids(), &[0, 1]);
        assert!(collapse(&path("---")).is_empty());
        assert_eq!(collapse(&path("a-ab-b")).ids(), &[0, 0, 1, 1]);
        assert_eq!(collapse(&path("abba")).ids(), &[0, 1, 0]);
    }

    #[test]
    fn log_add_handles_infinities() {
        assert_eq!(log_add(f64::NEG_INFINITY, -1.0), -1.0);
        assert!((log_add(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(log_sum_exp([]), f64::NEG_INFINITY);
    }

    #[test]
    fn unnormalized_rows_are_rejected() {
        let t = Tensor::new(vec![1, 2], vec![0.5f64.ln(), 0.6f64.ln()]).unwrap();
        assert!(LogitMatrix::from_log_probs(t).is_err());
    }
}
