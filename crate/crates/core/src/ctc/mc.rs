use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{collapse_ids, LabelSequence, LogitMatrix};
use crate::corpus::edit_distance;
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Sampled estimate of the expected transcription loss
/// `E_{q ~ Pr(q|x)} [ d(B(q), target) ]`, with `d` the Levenshtein distance.
#[derive(Clone, Debug, PartialEq)]
pub struct McEstimate {
    pub loss: f64,
    /// Score-function estimate `mean_i d_i * (onehot(q_i[t]) - y[t])` of the
    /// gradient w.r.t. pre-softmax activations.
    pub grad: Tensor,
}

/// Draws one frame-level path, each frame independently from its row.
pub fn sample_path<R: Rng>(logits: &LogitMatrix, rng: &mut R) -> Vec<usize> {
    (0..logits.n_frames())
        .map(|t| {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let row = logits.row(t);
            for (k, lp) in row.iter().enumerate() {
                acc += lp.exp();
                if u < acc {
                    return k;
                }
            }
            // rounding left a sliver above the cumulative sum
            row.iter()
                .rposition(|lp| *lp > f64::NEG_INFINITY)
                .unwrap_or(row.len() - 1)
        })
        .collect()
}

pub fn ctc_loss_mc(
    logits: &LogitMatrix,
    target: &LabelSequence,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be at least 1"));
    }
    let blank = logits.blank();
    if let Some(&bad) = target.ids().iter().find(|&&i| i >= blank) {
        return Err(Error::invalid(format!("target label {bad} is out of range")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (t_len, k_len) = (logits.n_frames(), logits.n_labels());
    let mut grad = Tensor::zeros(&[t_len, k_len]);
    let mut total = 0.0;
    for _ in 0..n_samples {
        let path = sample_path(logits, &mut rng);
        let hyp = collapse_ids(&path, blank);
        let d = edit_distance(target.ids(), hyp.ids()).edits() as f64;
        total += d;
        if d == 0.0 {
            continue;
        }
        for (t, &q) in path.iter().enumerate() {
            for (k, g) in grad.row_mut(t).iter_mut().enumerate() {
                let indicator = if k == q { 1.0 } else { 0.0 };
                *g += d * (indicator - logits.log_prob(t, k).exp());
            }
        }
    }
    let n = n_samples as f64;
    grad.data_mut().iter_mut().for_each(|g| *g /= n);
    Ok(McEstimate {
        loss: total / n,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_seed_reproduces() {
        let act = Tensor::new(vec![3, 3], (0..9).map(|i| (i as f64).cos()).collect()).unwrap();
        let logits = LogitMatrix::from_activations(&act).unwrap();
        let target = LabelSequence::from_ids(vec![1]);
        let a = ctc_loss_mc(&logits, &target, 1, 7).unwrap();
        assert_eq!(a, ctc_loss_mc(&logits, &target, 1, 7).unwrap());
    }

    #[test]
    fn zero_samples_rejected() {
        let logits = LogitMatrix::from_activations(&Tensor::zeros(&[2, 2])).unwrap();
        assert!(ctc_loss_mc(&logits, &LabelSequence::default(), 0, 0).is_err());
    }
}
