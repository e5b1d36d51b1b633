use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{FeatureMatrix, Waveform};
use crate::error::{Error, Result};

fn power(x: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = x.fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    sum / n.max(1) as f64
}

/// SNR in dB of `noisy` measured against `clean`.
pub fn measured_snr_db(clean: &Waveform, noisy: &Waveform) -> f64 {
    let signal = power(clean.samples().iter().map(|&v| v as f64));
    let noise = power(
        clean
            .samples()
            .iter()
            .zip(noisy.samples())
            .map(|(&a, &b)| b as f64 - a as f64),
    );
    10.0 * (signal / noise).log10()
}

/// Adds zero-mean white Gaussian noise scaled so the realized noise power
/// sits exactly `snr_db` below the signal power, then clips to `[-1, 1]`.
pub fn add_gaussian_noise(wav: &Waveform, snr_db: f64, seed: u64) -> Result<Waveform> {
    if !snr_db.is_finite() {
        return Err(Error::invalid(format!("snr_db must be finite, got {snr_db}")));
    }
    let signal = power(wav.samples().iter().map(|&v| v as f64));
    if signal == 0.0 {
        return Err(Error::invalid("SNR is undefined for an all-zero waveform"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise: Vec<f64> = (0..wav.len()).map(|_| rng.sample(StandardNormal)).collect();
    let mean = noise.iter().sum::<f64>() / noise.len() as f64;
    noise.iter_mut().for_each(|n| *n -= mean);
    let realized = power(noise.iter().copied());
    let target = signal / 10f64.powf(snr_db / 10.0);
    let scale = if realized > 0.0 { (target / realized).sqrt() } else { 0.0 };

    let samples = wav
        .samples()
        .iter()
        .zip(&noise)
        .map(|(&s, &n)| (s as f64 + scale * n).clamp(-1.0, 1.0) as f32)
        .collect();
    Waveform::new(samples, wav.sample_rate())
}

/// Piecewise-linear time warp: a random interior anchor frame moves by a
/// uniform offset in `[-warp, warp]` and both sides are linearly resampled.
pub fn time_warp(feat: &FeatureMatrix, warp: usize, seed: u64) -> Result<FeatureMatrix> {
    let t_len = feat.n_frames();
    if 2 * warp >= t_len {
        return Err(Error::invalid(format!(
            "warp_param {warp} must be below half the frame count {t_len}"
        )));
    }
    if warp == 0 {
        return Ok(feat.clone());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let last = (t_len - 1) as f64;
    let anchor = rng.gen_range(warp..t_len - warp);
    let offset = rng.gen_range(-(warp as i64)..=warp as i64);
    let moved = (anchor as i64 + offset).clamp(0, t_len as i64 - 1) as f64;
    let anchor = anchor as f64;

    let f = feat.n_feats();
    let mut out = Vec::with_capacity(t_len * f);
    for t in 0..t_len {
        let t = t as f64;
        let src = if t <= moved {
            if moved == 0.0 {
                anchor
            } else {
                t * anchor / moved
            }
        } else if moved >= last {
            anchor
        } else {
            anchor + (t - moved) * (last - anchor) / (last - moved)
        };
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(t_len - 1);
        let w = (src - lo as f64) as f32;
        let (a, b) = (feat.frame(lo), feat.frame(hi));
        out.extend(a.iter().zip(b).map(|(&x, &y)| x + w * (y - x)));
    }
    FeatureMatrix::new(out, t_len, f, feat.frame_hop_ms())
}
