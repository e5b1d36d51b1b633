use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{FeatureMatrix, FrontendConfig, Waveform};
use crate::error::{Error, Result};

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Number of full frames that fit in `len` samples.
pub fn frame_count(len: usize, window: usize, hop: usize) -> usize {
    if len < window || hop == 0 {
        0
    } else {
        (len - window) / hop + 1
    }
}

/// Triangular filters spaced evenly on the mel scale from 0 Hz to Nyquist.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    /// n_filters rows of n_bins weights.
    weights: Vec<Vec<f64>>,
    centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_filters: usize, n_fft: usize, sample_rate: u32) -> Self {
        let nyquist = sample_rate as f64 / 2.0;
        let n_bins = n_fft / 2 + 1;
        let mel_max = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..n_filters + 2)
            .map(|i| mel_to_hz(mel_max * i as f64 / (n_filters + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / n_fft as f64;

        let weights = (0..n_filters)
            .map(|m| {
                let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                (0..n_bins)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        if f <= lo || f >= hi {
                            0.0
                        } else if f <= mid {
                            (f - lo) / (mid - lo)
                        } else {
                            (hi - f) / (hi - mid)
                        }
                    })
                    .collect()
            })
            .collect();

        MelFilterbank {
            weights,
            centers_hz: edges[1..=n_filters].to_vec(),
        }
    }

    pub fn n_filters(&self) -> usize {
        self.weights.len()
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (o, w) in out.iter_mut().zip(&self.weights) {
            *o = w.iter().zip(power).map(|(a, b)| a * b).sum();
        }
    }
}

/// Precomputed analysis state for one (config, sample rate) pair.
pub struct Frontend {
    cfg: FrontendConfig,
    sample_rate: u32,
    window: Vec<f64>,
    hop: usize,
    n_fft: usize,
    fft: Arc<dyn Fft<f64>>,
    filterbank: MelFilterbank,
    /// n_ceps x n_filters DCT-II basis (orthonormal scaling).
    dct: Vec<f64>,
}

impl Frontend {
    pub fn new(cfg: &FrontendConfig, sample_rate: u32) -> Result<Self> {
        cfg.validate()?;
        let win = cfg.window_samples(sample_rate);
        let hop = cfg.hop_samples(sample_rate);
        if win < 2 || hop == 0 {
            return Err(Error::invalid(format!(
                "window of {win} samples / hop of {hop} samples is too short at {sample_rate} Hz"
            )));
        }
        let n_fft = win.next_power_of_two();
        let window = (0..win)
            .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (win - 1) as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        let filterbank = MelFilterbank::new(cfg.n_filters, n_fft, sample_rate);

        let m = cfg.n_filters as f64;
        let mut dct = Vec::with_capacity(cfg.n_ceps * cfg.n_filters);
        for i in 0..cfg.n_ceps {
            let scale = if i == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
            for j in 0..cfg.n_filters {
                dct.push(scale * (PI * i as f64 * (j as f64 + 0.5) / m).cos());
            }
        }

        Ok(Frontend {
            cfg: cfg.clone(),
            sample_rate,
            window,
            hop,
            n_fft,
            fft,
            filterbank,
            dct,
        })
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    pub fn hop_len(&self) -> usize {
        self.hop
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    /// Mel filterbank energies of one windowed frame (before the log).
    pub fn filterbank_energies(&self, frame: &[f32]) -> Vec<f64> {
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut power = vec![0.0; self.n_fft / 2 + 1];
        let mut out = vec![0.0; self.filterbank.n_filters()];
        self.frame_energies(frame, &mut buf, &mut power, &mut out);
        out
    }

    fn frame_energies(
        &self,
        frame: &[f32],
        buf: &mut [Complex<f64>],
        power: &mut [f64],
        out: &mut [f64],
    ) {
        for (i, b) in buf.iter_mut().enumerate() {
            let x = if i < self.window.len() {
                frame.get(i).copied().unwrap_or(0.0) as f64 * self.window[i]
            } else {
                0.0
            };
            *b = Complex::new(x, 0.0);
        }
        self.fft.process(buf);
        for (p, b) in power.iter_mut().zip(buf.iter()) {
            *p = b.norm_sqr();
        }
        self.filterbank.apply(power, out);
    }

    /// Raw (un-normalized) cepstra, T x n_ceps.
    pub fn cepstra(&self, wav: &Waveform) -> Result<(Vec<f64>, usize)> {
        if wav.sample_rate() != self.sample_rate {
            return Err(Error::invalid(format!(
                "front end built for {} Hz, waveform is {} Hz",
                self.sample_rate,
                wav.sample_rate()
            )));
        }
        let win = self.window.len();
        let n_frames = frame_count(wav.len(), win, self.hop);
        if n_frames == 0 {
            return Err(Error::invalid(format!(
                "utterance of {} samples is shorter than one {win}-sample window",
                wav.len()
            )));
        }

        let n_ceps = self.cfg.n_ceps;
        let n_filt = self.cfg.n_filters;
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut power = vec![0.0; self.n_fft / 2 + 1];
        let mut energies = vec![0.0; n_filt];
        let mut ceps = vec![0.0; n_frames * n_ceps];

        for t in 0..n_frames {
            let start = t * self.hop;
            let frame = &wav.samples()[start..start + win];
            self.frame_energies(frame, &mut buf, &mut power, &mut energies);
            for e in energies.iter_mut() {
                *e = e.max(self.cfg.log_floor).ln();
            }
            let row = &mut ceps[t * n_ceps..(t + 1) * n_ceps];
            for (i, c) in row.iter_mut().enumerate() {
                let basis = &self.dct[i * n_filt..(i + 1) * n_filt];
                *c = basis.iter().zip(&energies).map(|(a, b)| a * b).sum();
            }
        }
        Ok((ceps, n_frames))
    }

    pub fn extract(&self, wav: &Waveform) -> Result<FeatureMatrix> {
        let (mut ceps, n_frames) = self.cepstra(wav)?;
        normalize_columns(&mut ceps, n_frames, self.cfg.n_ceps);
        let data = ceps.into_iter().map(|v| v as f32).collect();
        FeatureMatrix::new(data, n_frames, self.cfg.n_ceps, self.cfg.hop_ms)
    }
}

/// Per-utterance mean and variance normalization of each coefficient.
/// Constant columns are only mean-centered.
fn normalize_columns(data: &mut [f64], rows: usize, cols: usize) {
    let n = rows as f64;
    for c in 0..cols {
        let mean = (0..rows).map(|r| data[r * cols + c]).sum::<f64>() / n;
        let var = (0..rows)
            .map(|r| {
                let d = data[r * cols + c] - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        let scale = if std > 1e-8 * (1.0 + mean.abs()) { 1.0 / std } else { 1.0 };
        for r in 0..rows {
            let v = &mut data[r * cols + c];
            *v = (*v - mean) * scale;
        }
    }
}

pub fn extract_mfcc(wav: &Waveform, cfg: &FrontendConfig) -> Result<FeatureMatrix> {
    Frontend::new(cfg, wav.sample_rate())?.extract(wav)
}
