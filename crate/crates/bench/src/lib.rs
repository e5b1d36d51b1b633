//! Deterministic inputs shared by the benchmarks.

use nas_asr::audio::Waveform;
use nas_asr::ctc::{Alphabet, LabelSequence, LogitMatrix};
use nas_asr::nn::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `secs` of a two-tone signal with light noise at 16 kHz.
pub fn tone(secs: f64) -> Waveform {
    let sr = 16_000u32;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let samples = (0..(secs * sr as f64) as usize)
        .map(|i| {
            let t = i as f64 / sr as f64;
            (0.4 * (2.0 * std::f64::consts::PI * 440.0 * t).sin()
                + 0.2 * (2.0 * std::f64::consts::PI * 1250.0 * t).sin()
                + 0.01 * rng.gen_range(-1.0..1.0)) as f32
        })
        .collect();
    Waveform::new(samples, sr).expect("valid waveform")
}

/// Uniform random activations of shape `[rows, cols]`.
pub fn activations(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches data")
}

/// Random posteriors over `alphabet.n_labels()` outputs.
pub fn logits(frames: usize, alphabet: &Alphabet, seed: u64) -> LogitMatrix {
    LogitMatrix::from_activations(&activations(frames, alphabet.n_labels(), seed)).expect("finite activations")
}

/// A random target of `len` labels.
pub fn target(len: usize, alphabet: &Alphabet, seed: u64) -> LabelSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = (0..len).map(|_| rng.gen_range(0..alphabet.len())).collect();
    LabelSequence::new(ids, alphabet).expect("ids within alphabet")
}
