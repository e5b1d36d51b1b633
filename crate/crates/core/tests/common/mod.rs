//! Brute-force reference implementations and numeric helpers shared by the
//! integration tests.
#![allow(dead_code)]

pub mod gradcheck;

use std::collections::BTreeMap;

use nas_asr::ctc::{log_sum_exp, Alphabet, LabelSequence, LogitMatrix};
use nas_asr::nn::{Layer, Mode, Tensor};
use rand::Rng;

/// Alphabet of the first `k` lowercase letters.
pub fn letters(k: usize) -> Alphabet {
    Alphabet::new(('a'..='z').take(k)).unwrap()
}

/// Log-posteriors from uniform random activations in `[-scale, scale]`.
pub fn random_logits<R: Rng>(rng: &mut R, frames: usize, n_labels: usize, scale: f64) -> LogitMatrix {
    let data = (0..frames * n_labels).map(|_| rng.gen_range(-scale..scale)).collect();
    LogitMatrix::from_activations(&Tensor::new(vec![frames, n_labels], data).unwrap()).unwrap()
}

pub fn random_target<R: Rng>(rng: &mut R, len: usize, alphabet: &Alphabet) -> LabelSequence {
    let ids = (0..len).map(|_| rng.gen_range(0..alphabet.len())).collect();
    LabelSequence::new(ids, alphabet).unwrap()
}

pub fn random_tensor<R: Rng>(rng: &mut R, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

/// Merge repeats, then drop blanks.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in path {
        if Some(k) != prev && k != blank {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

/// Calls `f` on every length-`frames` path over `n_labels` outputs.
pub fn for_each_path(frames: usize, n_labels: usize, mut f: impl FnMut(&[usize])) {
    let mut path = vec![0; frames];
    loop {
        f(&path);
        let mut i = 0;
        loop {
            if i == frames {
                return;
            }
            path[i] += 1;
            if path[i] < n_labels {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

fn path_logp(logits: &LogitMatrix, path: &[usize]) -> f64 {
    path.iter().enumerate().map(|(t, &k)| logits.log_prob(t, k)).sum()
}

/// `ln P(target | x)` by summing every path that collapses to `target`.
pub fn enumerate_ctc(logits: &LogitMatrix, target: &[usize]) -> f64 {
    let mut terms = Vec::new();
    for_each_path(logits.n_frames(), logits.n_labels(), |p| {
        if collapse(p, logits.blank()) == target {
            terms.push(path_logp(logits, p));
        }
    });
    log_sum_exp(terms)
}

/// Every labeling with its total log-probability.
pub fn labeling_scores(logits: &LogitMatrix) -> BTreeMap<Vec<usize>, f64> {
    let mut terms: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
    for_each_path(logits.n_frames(), logits.n_labels(), |p| {
        terms
            .entry(collapse(p, logits.blank()))
            .or_default()
            .push(path_logp(logits, p));
    });
    terms.into_iter().map(|(k, v)| (k, log_sum_exp(v))).collect()
}

/// The most probable labeling and its log-probability.
pub fn best_labeling(logits: &LogitMatrix) -> (Vec<usize>, f64) {
    labeling_scores(logits)
        .into_iter()
        .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
        .unwrap()
}

/// Fewest unit-cost edits turning `r` into `h`, by exhaustive recursion.
pub fn brute_edit_distance<T: PartialEq>(r: &[T], h: &[T]) -> usize {
    match (r.split_first(), h.split_first()) {
        (None, _) => h.len(),
        (_, None) => r.len(),
        (Some((a, rr)), Some((b, hh))) => {
            let sub = brute_edit_distance(rr, hh) + usize::from(a != b);
            let del = brute_edit_distance(rr, h) + 1;
            let ins = brute_edit_distance(r, hh) + 1;
            sub.min(del).min(ins)
        }
    }
}

/// Central difference step used by the gradient checks.
pub const FD_STEP: f64 = 1e-5;

/// Gradients whose magnitudes are both below this are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central-difference derivative of `f` along each coordinate of `x`.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let up = f(&probe);
            probe[i] = orig - FD_STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Largest relative error between two gradient vectors.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_error(a, n))
        .fold(0.0, f64::max)
}

/// Worst relative error of `layer`'s input and parameter gradients against
/// central differences, for the scalar loss `sum(weights * forward(input))`.
pub fn layer_grad_error<L: Layer + Clone>(layer: &L, input: &Tensor, weights: &Tensor, mode: Mode) -> f64 {
    let loss = |l: &mut L, x: &Tensor| -> f64 {
        let out = l.forward(x, mode).unwrap();
        out.data().iter().zip(weights.data()).map(|(o, w)| o * w).sum()
    };

    let mut analytic = layer.clone();
    analytic.zero_grad();
    let out = analytic.forward(input, mode).unwrap();
    assert_eq!(out.shape(), weights.shape(), "weights must match the output shape");
    let dx = analytic.backward(weights).unwrap();

    let num_dx = numeric_grad(input.data(), |x| {
        let x = Tensor::new(input.shape().to_vec(), x.to_vec()).unwrap();
        loss(&mut layer.clone(), &x)
    });
    let mut worst = max_rel_error(dx.data(), &num_dx);

    let grads: Vec<Vec<f64>> = analytic.params().iter().map(|p| p.grad.data().to_vec()).collect();
    for (i, g) in grads.iter().enumerate() {
        let base = layer.params()[i].value.data().to_vec();
        let num = numeric_grad(&base, |v| {
            let mut l = layer.clone();
            l.params_mut()[i].value.data_mut().copy_from_slice(v);
            loss(&mut l, input)
        });
        worst = worst.max(max_rel_error(g, &num));
    }
    worst
}
