//! Greedy and prefix beam-search decoding of CTC posteriors, with optional
//! word n-gram shallow fusion.

mod tune;

pub use tune::{dev_error_rate, tune_fusion, FusionChoice};

use std::cmp::Ordering;
use std::collections::HashMap;
use std::f64::consts::LN_10;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ctc::{log_add, Alphabet, LabelSequence, LogitMatrix};
use crate::error::{Error, Result};
use crate::lm::{NGramModel, WordId};

/// Per-frame argmax (lowest index wins ties), then collapse.
pub fn greedy_labels(logits: &LogitMatrix) -> LabelSequence {
    let blank = logits.blank();
    let mut out = Vec::new();
    let mut prev = None;
    for t in 0..logits.n_frames() {
        let row = logits.row(t);
        let mut best = 0;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        if best != blank && prev != Some(best) {
            out.push(best);
        }
        prev = Some(best);
    }
    LabelSequence::from_ids(out)
}

pub fn greedy_decode(logits: &LogitMatrix, alphabet: &Alphabet) -> String {
    alphabet.decode(&greedy_labels(logits))
}

#[derive(Clone, Debug)]
pub struct DecoderConfig {
    pub beam_width: usize,
    /// LM weight.
    pub alpha: f64,
    /// Per-word insertion bonus.
    pub beta: f64,
    pub lm: Option<Arc<NGramModel>>,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            beam_width: 128,
            alpha: 0.0,
            beta: 0.0,
            lm: None,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 {
            return Err(Error::invalid("beam_width must be at least 1"));
        }
        if !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(Error::invalid("alpha and beta must be finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub labels: LabelSequence,
    pub text: String,
    pub log_p_blank: f64,
    pub log_p_nonblank: f64,
    /// Natural-log LM probability of the transcript, `</s>` included.
    pub lm_logp: f64,
    pub word_count: usize,
    pub fused_score: f64,
}

impl Hypothesis {
    /// `log P(c | x)`: total mass of paths collapsing to this prefix.
    pub fn acoustic_logp(&self) -> f64 {
        log_add(self.log_p_blank, self.log_p_nonblank)
    }
}

#[derive(Clone, Debug)]
struct Beam {
    pb: f64,
    pnb: f64,
    lm: f64,
    words: usize,
    /// Start of the unfinished word within the prefix.
    word_start: usize,
    /// Most recent completed words, oldest first.
    history: Vec<WordId>,
}

impl Beam {
    fn acoustic(&self) -> f64 {
        log_add(self.pb, self.pnb)
    }
}

struct Fusion<'a> {
    lm: &'a NGramModel,
    alpha: f64,
    beta: f64,
    space: Option<usize>,
    alphabet: &'a Alphabet,
}

impl Fusion<'_> {
    fn word_logp(&self, history: &[WordId], word: WordId) -> f64 {
        self.lm.log10_prob_ids(history, word) * LN_10
    }

    fn word_id(&self, ids: &[usize]) -> WordId {
        let word: String = ids.iter().filter_map(|&i| self.alphabet.symbol(i)).collect();
        self.lm.word_id(&word)
    }

    fn complete(&self, beam: &mut Beam, word: WordId) {
        beam.lm += self.word_logp(&beam.history, word);
        beam.words += 1;
        beam.history.push(word);
        let keep = self.lm.order().saturating_sub(1);
        if beam.history.len() > keep {
            beam.history.drain(..beam.history.len() - keep);
        }
    }

    /// LM state after appending `c` to `prefix` (which already ends in `c`).
    fn extend(&self, parent: &Beam, prefix: &[usize]) -> Beam {
        let mut next = Beam {
            pb: f64::NEG_INFINITY,
            pnb: f64::NEG_INFINITY,
            ..parent.clone()
        };
        let c = *prefix.last().expect("extended prefix is non-empty");
        match self.space {
            // no delimiter: every symbol is a word
            None => {
                let w = self.word_id(&prefix[prefix.len() - 1..]);
                self.complete(&mut next, w);
                next.word_start = prefix.len();
            }
            Some(space) if c == space => {
                let word = &prefix[parent.word_start..prefix.len() - 1];
                if !word.is_empty() {
                    let w = self.word_id(word);
                    self.complete(&mut next, w);
                }
                next.word_start = prefix.len();
            }
            Some(_) => {}
        }
        next
    }

    fn finish(&self, beam: &mut Beam, prefix: &[usize]) {
        let partial = &prefix[beam.word_start..];
        if !partial.is_empty() {
            let w = self.word_id(partial);
            self.complete(beam, w);
        }
        beam.lm += self.word_logp(&beam.history, self.lm.eos());
    }

    fn score(&self, beam: &Beam) -> f64 {
        fused(beam.acoustic(), beam.lm, beam.words, self.alpha, self.beta)
    }
}

/// `log P(c|x) + alpha * log P_lm(c) + beta * count(c)`; a zero weight drops
/// its term entirely so `alpha = beta = 0` is the bare acoustic score.
fn fused(acoustic: f64, lm: f64, words: usize, alpha: f64, beta: f64) -> f64 {
    let mut s = acoustic;
    if alpha != 0.0 {
        s += alpha * lm;
    }
    if beta != 0.0 {
        s += beta * words as f64;
    }
    s
}

fn cmp_prefix(a: &[usize], b: &[usize], alphabet: &Alphabet) -> Ordering {
    let sym = |i: &usize| alphabet.symbol(*i);
    a.iter().map(sym).cmp(b.iter().map(sym))
}

/// Higher score first, then lexicographically smaller prefix.
fn rank(
    a: (&[usize], f64),
    b: (&[usize], f64),
    alphabet: &Alphabet,
) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| cmp_prefix(a.0, b.0, alphabet))
}

/// CTC prefix beam search. Keeps exactly `beam_width` prefixes per frame and
/// returns the surviving hypotheses best first.
pub fn beam_decode(
    logits: &LogitMatrix,
    cfg: &DecoderConfig,
    alphabet: &Alphabet,
) -> Result<Vec<Hypothesis>> {
    cfg.validate()?;
    if logits.n_labels() != alphabet.n_labels() {
        return Err(Error::shape(format!(
            "logits have {} labels, alphabet needs {}",
            logits.n_labels(),
            alphabet.n_labels()
        )));
    }
    let blank = logits.blank();
    let fusion = cfg.lm.as_deref().map(|lm| Fusion {
        lm,
        alpha: cfg.alpha,
        beta: cfg.beta,
        space: alphabet.space_index(),
        alphabet,
    });
    let score = |b: &Beam| match &fusion {
        Some(f) => f.score(b),
        None => b.acoustic(),
    };

    let root = Beam {
        pb: 0.0,
        pnb: f64::NEG_INFINITY,
        lm: 0.0,
        words: 0,
        word_start: 0,
        history: fusion
            .as_ref()
            .map(|f| vec![f.lm.bos()])
            .unwrap_or_default(),
    };
    let mut beams: Vec<(Vec<usize>, Beam)> = vec![(Vec::new(), root)];

    for t in 0..logits.n_frames() {
        let row = logits.row(t);
        let mut next: HashMap<Vec<usize>, Beam> = HashMap::with_capacity(beams.len() * row.len());
        let mut order: Vec<Vec<usize>> = Vec::new();
        let mut slot = |prefix: Vec<usize>, make: &dyn Fn(&[usize]) -> Beam| -> Vec<usize> {
            if !next.contains_key(&prefix) {
                next.insert(prefix.clone(), make(&prefix));
                order.push(prefix.clone());
            }
            prefix
        };
        // Gather contributions first, then fold them in a fixed order so the
        // result does not depend on hash iteration.
        let mut adds: Vec<(Vec<usize>, bool, f64)> = Vec::new();
        for (prefix, beam) in &beams {
            let total = beam.acoustic();
            let key = slot(prefix.clone(), &|_| Beam {
                pb: f64::NEG_INFINITY,
                pnb: f64::NEG_INFINITY,
                ..beam.clone()
            });
            adds.push((key.clone(), true, total + row[blank]));
            let last = prefix.last().copied();
            for (c, &lp) in row.iter().enumerate() {
                if c == blank {
                    continue;
                }
                let mut ext = prefix.clone();
                ext.push(c);
                let ext = slot(ext, &|p| match &fusion {
                    Some(f) => f.extend(beam, p),
                    None => Beam {
                        pb: f64::NEG_INFINITY,
                        pnb: f64::NEG_INFINITY,
                        ..beam.clone()
                    },
                });
                if last == Some(c) {
                    // a repeat only starts a new symbol after a blank
                    adds.push((ext, false, beam.pb + lp));
                    adds.push((key.clone(), false, beam.pnb + lp));
                } else {
                    adds.push((ext, false, total + lp));
                }
            }
        }
        for (prefix, is_blank, lp) in adds {
            let b = next.get_mut(&prefix).expect("slot created");
            if is_blank {
                b.pb = log_add(b.pb, lp);
            } else {
                b.pnb = log_add(b.pnb, lp);
            }
        }
        let mut ranked: Vec<(Vec<usize>, Beam, f64)> = order
            .into_iter()
            .map(|p| {
                let b = next.remove(&p).expect("slot created");
                let s = score(&b);
                (p, b, s)
            })
            .collect();
        ranked.sort_by(|a, b| rank((&a.0, a.2), (&b.0, b.2), alphabet));
        ranked.truncate(cfg.beam_width);
        beams = ranked.into_iter().map(|(p, b, _)| (p, b)).collect();
    }

    let mut out: Vec<Hypothesis> = beams
        .into_iter()
        .map(|(prefix, mut beam)| {
            if let Some(f) = &fusion {
                f.finish(&mut beam, &prefix);
            }
            let fused_score = score(&beam);
            let labels = LabelSequence::from_ids(prefix);
            Hypothesis {
                text: alphabet.decode(&labels),
                labels,
                log_p_blank: beam.pb,
                log_p_nonblank: beam.pnb,
                lm_logp: beam.lm,
                word_count: beam.words,
                fused_score,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        rank(
            (a.labels.ids(), a.fused_score),
            (b.labels.ids(), b.fused_score),
            alphabet,
        )
    });
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodedText {
    pub text: String,
    pub acoustic_logp: f64,
    pub fused_score: f64,
}

/// One line of decode output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeRecord {
    pub id: String,
    pub top: Vec<DecodedText>,
}

impl DecodeRecord {
    pub fn new(id: impl Into<String>, hyps: &[Hypothesis], top_k: usize) -> Self {
        DecodeRecord {
            id: id.into(),
            top: hyps
                .iter()
                .take(top_k)
                .map(|h| DecodedText {
                    text: h.text.clone(),
                    acoustic_logp: h.acoustic_logp(),
                    fused_score: h.fused_score,
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{train_ngram, Smoothing};
    use crate::nn::Tensor;

    fn probs(rows: &[&[f64]]) -> LogitMatrix {
        let k = rows[0].len();
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        LogitMatrix::from_probs(&Tensor::new(vec![rows.len(), k], data).unwrap()).unwrap()
    }

    #[test]
    fn greedy_all_blank_is_empty() {
        let ab = Alphabet::new(['a', 'b']).unwrap();
        let l = probs(&[&[0.0, 0.0, 1.0], &[0.0, 0.0, 1.0]]);
        assert_eq!(greedy_decode(&l, &ab), "");
    }

    #[test]
    fn greedy_collapses() {
        let ab = Alphabet::new(['a', 'b']).unwrap();
        let l = probs(&[
            &[0.8, 0.1, 0.1],
            &[0.7, 0.1, 0.2],
            &[0.1, 0.1, 0.8],
            &[0.1, 0.8, 0.1],
        ]);
        assert_eq!(greedy_decode(&l, &ab), "ab");
    }

    #[test]
    fn greedy_ties_go_to_lowest_index() {
        let ab = Alphabet::new(['a', 'b']).unwrap();
        let l = probs(&[&[0.4, 0.4, 0.2]]);
        assert_eq!(greedy_decode(&l, &ab), "a");
        let l = probs(&[&[0.2, 0.4, 0.4]]);
        assert_eq!(greedy_decode(&l, &ab), "b");
    }

    #[test]
    fn blank_dominant_gives_empty_for_any_width() {
        let ab = Alphabet::new(['a', 'b']).unwrap();
        let row: &[f64] = &[0.1, 0.1, 0.8];
        let l = probs(&[row; 5]);
        for w in [1, 2, 8, 128] {
            let cfg = DecoderConfig {
                beam_width: w,
                ..Default::default()
            };
            assert_eq!(beam_decode(&l, &cfg, &ab).unwrap()[0].text, "");
        }
    }

    #[test]
    fn beam_sums_paths_that_greedy_misses() {
        // best path is "--" (0.36) but "a" collects 0.64 over three paths
        let ab = Alphabet::new(['a']).unwrap();
        let l = probs(&[&[0.4, 0.6], &[0.4, 0.6]]);
        assert_eq!(greedy_decode(&l, &ab), "");
        let h = &beam_decode(&l, &DecoderConfig::default(), &ab).unwrap()[0];
        assert_eq!(h.text, "a");
        assert!((h.acoustic_logp() - 0.64f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn lm_breaks_acoustic_tie() {
        let ab = Alphabet::new(['a', 'b', 'c', ' ']).unwrap();
        // "a ?" where ? is b or c with equal acoustic probability
        let l = probs(&[
            &[1.0, 0.0, 0.0, 0.0, 0.0],
            &[0.0, 0.0, 0.0, 1.0, 0.0],
            &[0.0, 0.5, 0.5, 0.0, 0.0],
        ]);
        let lm = train_ngram(&["a b", "a b", "c a"], 2, Smoothing::WittenBell).unwrap();
        let cfg = DecoderConfig {
            beam_width: 16,
            alpha: 1.0,
            beta: 0.0,
            lm: Some(Arc::new(lm)),
        };
        let hyps = beam_decode(&l, &cfg, &ab).unwrap();
        assert_eq!(hyps[0].text, "a b");
        assert_eq!(hyps[0].word_count, 2);
        // without the LM the tie goes to the lexicographically smaller prefix
        let plain = beam_decode(&l, &DecoderConfig::default(), &ab).unwrap();
        assert_eq!(plain[0].text, "a b");
        let cfg_c = DecoderConfig {
            lm: Some(Arc::new(
                train_ngram(&["a c", "a c", "b a"], 2, Smoothing::WittenBell).unwrap(),
            )),
            ..cfg
        };
        assert_eq!(beam_decode(&l, &cfg_c, &ab).unwrap()[0].text, "a c");
    }

    #[test]
    fn zero_weights_match_plain_scores() {
        let ab = Alphabet::new(['a', 'b', ' ']).unwrap();
        let act = Tensor::new(vec![5, 4], (0..20).map(|i| (i as f64 * 0.9).cos()).collect()).unwrap();
        let l = LogitMatrix::from_activations(&act).unwrap();
        let lm = train_ngram(&["a b", "b"], 2, Smoothing::WittenBell).unwrap();
        let fused = DecoderConfig {
            lm: Some(Arc::new(lm)),
            ..Default::default()
        };
        let a = beam_decode(&l, &fused, &ab).unwrap();
        let b = beam_decode(&l, &DecoderConfig::default(), &ab).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.labels, y.labels);
            assert_eq!(x.fused_score.to_bits(), y.fused_score.to_bits());
            assert_eq!(x.fused_score.to_bits(), x.acoustic_logp().to_bits());
        }
    }

    #[test]
    fn phone_mode_scores_every_symbol() {
        let ab = Alphabet::new(['a', 'b']).unwrap();
        let l = probs(&[&[0.5, 0.5, 0.0], &[0.0, 0.0, 1.0], &[0.5, 0.5, 0.0]]);
        let lm = train_ngram(&["a b", "a b", "a b"], 2, Smoothing::WittenBell).unwrap();
        let cfg = DecoderConfig {
            alpha: 2.0,
            lm: Some(Arc::new(lm)),
            ..Default::default()
        };
        let top = &beam_decode(&l, &cfg, &ab).unwrap()[0];
        assert_eq!(top.text, "ab");
        assert_eq!(top.word_count, 2);
    }

    #[test]
    fn invalid_config_rejected() {
        let ab = Alphabet::new(['a']).unwrap();
        let l = probs(&[&[0.5, 0.5]]);
        let cfg = DecoderConfig {
            beam_width: 0,
            ..Default::default()
        };
        assert!(beam_decode(&l, &cfg, &ab).is_err());
        let cfg = DecoderConfig {
            alpha: f64::NAN,
            ..Default::default()
        };
        assert!(beam_decode(&l, &cfg, &ab).is_err());
    }

    #[test]
    fn record_serializes() {
        let ab = Alphabet::new(['a']).unwrap();
        let l = probs(&[&[0.9, 0.1]]);
        let hyps = beam_decode(&l, &DecoderConfig::default(), &ab).unwrap();
        let rec = DecodeRecord::new("u1", &hyps, 1);
        let json = serde_json::to_string(&rec).unwrap();
        assert!(json.starts_with("{\"id\":\"u1\",\"top\":[{\"text\":\"a\""));
    }
}
