use super::{log_add, log_sum_exp, LabelSequence, LogitMatrix};
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Fewest frames that can emit `target`: one per label plus a separating
/// blank between each adjacent repeat.
pub fn min_frames(target: &LabelSequence) -> usize {
    let ids = target.ids();
    ids.len() + ids.windows(2).filter(|w| w[0] == w[1]).count()
}

#[derive(Clone, Debug, PartialEq)]
pub enum CtcResult {
    /// `loss = -ln Pr(target | x)`; `grad` is taken w.r.t. the
    /// pre-softmax activations.
    Feasible { loss: f64, grad: Tensor },
    /// No alignment of the target fits (too few frames, or every
    /// alignment has zero probability).
    Infeasible { min_frames: usize, frames: usize },
}

impl CtcResult {
    /// Loss, with infeasible targets reported as `+inf`.
    pub fn loss(&self) -> f64 {
        match self {
            CtcResult::Feasible { loss, .. } => *loss,
            CtcResult::Infeasible { .. } => f64::INFINITY,
        }
    }

    pub fn is_feasible(&self) -> bool {
        matches!(self, CtcResult::Feasible { .. })
    }
}

/// Forward and backward variables over the blank-augmented target.
///
/// `log_alpha[t][s]` includes the emission at `t`; `log_beta[t][s]` covers
/// frames after `t` only, so `sum_s alpha_t(s) * beta_t(s)` is the sequence
/// likelihood at every `t`.
#[derive(Clone, Debug)]
pub struct CtcLattice {
    pub extended: Vec<usize>,
    pub log_alpha: Vec<Vec<f64>>,
    pub log_beta: Vec<Vec<f64>>,
    pub log_likelihood: f64,
}

fn validate(logits: &LogitMatrix, target: &LabelSequence) -> Result<()> {
    let blank = logits.blank();
    if let Some(&bad) = target.ids().iter().find(|&&i| i >= blank) {
        return Err(Error::invalid(format!(
            "target label {bad} is not a symbol of a {}-label logit matrix",
            logits.n_labels()
        )));
    }
    Ok(())
}

fn can_skip(ext: &[usize], s: usize, blank: usize) -> bool {
    s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]
}

pub fn forward_backward(logits: &LogitMatrix, target: &LabelSequence) -> Result<CtcLattice> {
    validate(logits, target)?;
    let blank = logits.blank();
    let t_len = logits.n_frames();
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(blank);
    for &id in target.ids() {
        ext.push(id);
        ext.push(blank);
    }
    let s_len = ext.len();
    let neg = f64::NEG_INFINITY;

    let mut alpha = vec![vec![neg; s_len]; t_len];
    alpha[0][0] = logits.log_prob(0, blank);
    if s_len > 1 {
        alpha[0][1] = logits.log_prob(0, ext[1]);
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut a = alpha[t - 1][s];
            if s >= 1 {
                a = log_add(a, alpha[t - 1][s - 1]);
            }
            if can_skip(&ext, s, blank) {
                a = log_add(a, alpha[t - 1][s - 2]);
            }
            alpha[t][s] = a + logits.log_prob(t, ext[s]);
        }
    }

    let mut beta = vec![vec![neg; s_len]; t_len];
    beta[t_len - 1][s_len - 1] = 0.0;
    if s_len > 1 {
        beta[t_len - 1][s_len - 2] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let next = |s2: usize| beta[t + 1][s2] + logits.log_prob(t + 1, ext[s2]);
            let mut b = next(s);
            if s + 1 < s_len {
                b = log_add(b, next(s + 1));
            }
            if s + 2 < s_len && can_skip(&ext, s + 2, blank) {
                b = log_add(b, next(s + 2));
            }
            beta[t][s] = b;
        }
    }

    let last = &alpha[t_len - 1];
    let log_likelihood = if s_len > 1 {
        log_add(last[s_len - 1], last[s_len - 2])
    } else {
        last[0]
    };
    Ok(CtcLattice {
        extended: ext,
        log_alpha: alpha,
        log_beta: beta,
        log_likelihood,
    })
}

/// Exact CTC negative log-likelihood and its gradient.
pub fn ctc_loss(logits: &LogitMatrix, target: &LabelSequence) -> Result<CtcResult> {
    validate(logits, target)?;
    let needed = min_frames(target);
    let t_len = logits.n_frames();
    if t_len < needed {
        return Ok(CtcResult::Infeasible {
            min_frames: needed,
            frames: t_len,
        });
    }
    let lat = forward_backward(logits, target)?;
    if lat.log_likelihood == f64::NEG_INFINITY {
        return Ok(CtcResult::Infeasible {
            min_frames: needed,
            frames: t_len,
        });
    }

    let k_len = logits.n_labels();
    let mut grad = Tensor::zeros(&[t_len, k_len]);
    let mut occupancy = vec![f64::NEG_INFINITY; k_len];
    for t in 0..t_len {
        occupancy.fill(f64::NEG_INFINITY);
        for (s, &label) in lat.extended.iter().enumerate() {
            occupancy[label] = log_add(occupancy[label], lat.log_alpha[t][s] + lat.log_beta[t][s]);
        }
        for (k, g) in grad.row_mut(t).iter_mut().enumerate() {
            let posterior = (occupancy[k] - lat.log_likelihood).exp();
            *g = logits.log_prob(t, k).exp() - posterior;
        }
    }
    Ok(CtcResult::Feasible {
        loss: (-lat.log_likelihood).max(0.0),
        grad,
    })
}

/// Likelihood implied by the lattice at frame `t`.
impl CtcLattice {
    pub fn log_likelihood_at(&self, t: usize) -> f64 {
        log_sum_exp(
            self.log_alpha[t]
                .iter()
                .zip(&self.log_beta[t])
                .map(|(a, b)| a + b),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(t: usize, k: usize) -> LogitMatrix {
        LogitMatrix::from_activations(&Tensor::zeros(&[t, k])).unwrap()
    }

    #[test]
    fn single_blank_frame() {
        let r = ctc_loss(&uniform(1, 2), &LabelSequence::from_ids(vec![])).unwrap();
        assert!((r.loss() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_frames_three_labels() {
        // paths aa, a-, -a out of 9
        let r = ctc_loss(&uniform(2, 3), &LabelSequence::from_ids(vec![0])).unwrap();
        assert!((r.loss() - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn too_short_is_infeasible_not_an_error() {
        let r = ctc_loss(&uniform(2, 2), &LabelSequence::from_ids(vec![0, 0])).unwrap();
        assert_eq!(
            r,
            CtcResult::Infeasible {
                min_frames: 3,
                frames: 2
            }
        );
        assert_eq!(r.loss(), f64::INFINITY);
    }

    #[test]
    fn out_of_range_target_is_an_error() {
        assert!(ctc_loss(&uniform(3, 2), &LabelSequence::from_ids(vec![1])).is_err());
    }

    #[test]
    fn certain_path_has_zero_loss() {
        let probs = Tensor::new(vec![3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        let logits = LogitMatrix::from_probs(&probs).unwrap();
        let r = ctc_loss(&logits, &LabelSequence::from_ids(vec![0, 0])).unwrap();
        assert_eq!(r.loss(), 0.0);
        // target with zero-probability alignments only
        let r = ctc_loss(&logits, &LabelSequence::from_ids(vec![0])).unwrap();
        assert!(!r.is_feasible());
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let act = Tensor::new(vec![4, 3], (0..12).map(|i| (i as f64 * 0.37).sin()).collect())
            .unwrap();
        let logits = LogitMatrix::from_activations(&act).unwrap();
        let r = ctc_loss(&logits, &LabelSequence::from_ids(vec![0, 1])).unwrap();
        let CtcResult::Feasible { grad, .. } = r else {
            panic!("feasible")
        };
        for t in 0..4 {
            assert!(grad.row(t).iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn min_frames_counts_repeats() {
        assert_eq!(min_frames(&LabelSequence::from_ids(vec![0, 0, 1, 1, 1])), 8);
        assert_eq!(min_frames(&LabelSequence::from_ids(vec![])), 0);
    }
}
