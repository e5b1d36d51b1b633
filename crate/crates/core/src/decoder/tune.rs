use serde::{Deserialize, Serialize};

use super::{beam_decode, DecoderConfig};
use crate::corpus::{aggregate, labels_to_transcript, score_transcript, Unit};
use crate::ctc::{Alphabet, LogitMatrix};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionChoice {
    pub alpha: f64,
    pub beta: f64,
    /// Aggregate dev error rate at this point.
    pub error_rate: f64,
}

/// Error rate of top-1 beam output over a dev set.
pub fn dev_error_rate(
    dev: &[(LogitMatrix, String)],
    cfg: &DecoderConfig,
    alphabet: &Alphabet,
    unit: Unit,
) -> Result<f64> {
    let mut results = Vec::with_capacity(dev.len());
    for (logits, reference) in dev {
        let hyps = beam_decode(logits, cfg, alphabet)?;
        let text = hyps
            .first()
            .map(|h| labels_to_transcript(&h.labels, unit, alphabet))
            .unwrap_or_default();
        results.push(score_transcript(reference, &text, unit)?);
    }
    Ok(aggregate(&results).rate)
}

/// Grid search over `alphas x betas` for the lowest dev error rate. Ties
/// go to the smallest `(alpha, beta)`.
pub fn tune_fusion(
    dev: &[(LogitMatrix, String)],
    alphas: &[f64],
    betas: &[f64],
    base: &DecoderConfig,
    alphabet: &Alphabet,
    unit: Unit,
) -> Result<FusionChoice> {
    if alphas.is_empty() || betas.is_empty() {
        return Err(Error::invalid("fusion grid is empty"));
    }
    if dev.is_empty() {
        return Err(Error::invalid("fusion dev set is empty"));
    }
    let mut grid: Vec<(f64, f64)> = alphas
        .iter()
        .flat_map(|&a| betas.iter().map(move |&b| (a, b)))
        .collect();
    grid.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
    grid.dedup();

    let mut best: Option<FusionChoice> = None;
    for (alpha, beta) in grid {
        let cfg = DecoderConfig {
            alpha,
            beta,
            ..base.clone()
        };
        let rate = dev_error_rate(dev, &cfg, alphabet, unit)?;
        tracing::debug!(alpha, beta, rate, "fusion grid point");
        if best.is_none_or(|b| rate < b.error_rate) {
            best = Some(FusionChoice {
                alpha,
                beta,
                error_rate: rate,
            });
        }
    }
    Ok(best.expect("grid is non-empty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{train_ngram, Smoothing};
    use crate::nn::Tensor;
    use std::sync::Arc;

    fn ambiguous() -> (Alphabet, Vec<(LogitMatrix, String)>) {
        let ab = Alphabet::new(['a', 'b', 'c', ' ']).unwrap();
        // "a" then space then b/c slightly favouring the wrong "c"
        let rows: Vec<f64> = vec![
            1.0, 0.0, 0.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 1.0, 0.0, //
            0.0, 0.45, 0.55, 0.0, 0.0,
        ];
        let l = LogitMatrix::from_probs(&Tensor::new(vec![3, 5], rows).unwrap()).unwrap();
        (ab, vec![(l, "a b".to_string())])
    }

    fn base() -> DecoderConfig {
        let lm = train_ngram(&["a b", "a b", "c a"], 2, Smoothing::WittenBell).unwrap();
        DecoderConfig {
            beam_width: 16,
            lm: Some(Arc::new(lm)),
            ..Default::default()
        }
    }

    #[test]
    fn origin_only_grid_returns_origin() {
        let (ab, dev) = ambiguous();
        let c = tune_fusion(&dev, &[0.0], &[0.0], &base(), &ab, Unit::Word).unwrap();
        assert_eq!((c.alpha, c.beta), (0.0, 0.0));
        assert_eq!(c.error_rate, 0.5);
    }

    #[test]
    fn lm_fixes_substitution() {
        let (ab, dev) = ambiguous();
        let grid = [0.0, 0.5, 1.0, 2.0];
        let c = tune_fusion(&dev, &grid, &[0.0, 1.0], &base(), &ab, Unit::Word).unwrap();
        assert!(c.alpha > 0.0);
        assert_eq!(c.error_rate, 0.0);
        let again = tune_fusion(&dev, &grid, &[0.0, 1.0], &base(), &ab, Unit::Word).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn empty_grid_or_dev_rejected() {
        let (ab, dev) = ambiguous();
        assert!(tune_fusion(&dev, &[], &[0.0], &base(), &ab, Unit::Word).is_err());
        assert!(tune_fusion(&[], &[0.0], &[0.0], &base(), &ab, Unit::Word).is_err());
    }
}
