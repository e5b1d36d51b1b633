//! Acoustic front end: PCM16 ingestion, MFCC extraction, augmentation and
//! the binary feature cache.

mod augment;
mod cache;
mod mfcc;
mod wav;

pub use augment::{add_gaussian_noise, measured_snr_db, time_warp};
pub use cache::{read_feature_cache, write_feature_cache, CACHE_MAGIC, CACHE_VERSION};
pub use mfcc::{extract_mfcc, frame_count, hz_to_mel, mel_to_hz, Frontend, MelFilterbank};
pub use wav::{read_wav, write_wav};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mono audio with samples normalized to `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("waveform is empty"));
        }
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::invalid(format!("sample {i} is not finite")));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontendConfig {
    pub window_ms: f64,
    pub hop_ms: f64,
    pub n_filters: usize,
    pub n_ceps: usize,
    /// Energies are clamped to at least this value before the log.
    pub log_floor: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig {
            window_ms: 20.0,
            hop_ms: 10.0,
            n_filters: 32,
            n_ceps: 16,
            log_floor: 1e-10,
        }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_ms > 0.0 && self.hop_ms > 0.0) {
            return Err(Error::invalid("window_ms and hop_ms must be positive"));
        }
        if self.hop_ms > self.window_ms {
            return Err(Error::invalid(format!(
                "hop_ms ({}) exceeds window_ms ({})",
                self.hop_ms, self.window_ms
            )));
        }
        if self.n_ceps == 0 || self.n_ceps > self.n_filters {
            return Err(Error::invalid(format!(
                "need 0 < n_ceps ({}) <= n_filters ({})",
                self.n_ceps, self.n_filters
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::invalid("log_floor must be positive"));
        }
        Ok(())
    }

    pub(crate) fn window_samples(&self, sample_rate: u32) -> usize {
        (self.window_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    pub(crate) fn hop_samples(&self, sample_rate: u32) -> usize {
        (self.hop_ms * sample_rate as f64 / 1000.0).round() as usize
    }
}

/// T x F matrix of per-frame features, row-major along time.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f32>,
    n_frames: usize,
    n_feats: usize,
    frame_hop_ms: f64,
}

impl FeatureMatrix {
    pub fn new(data: Vec<f32>, n_frames: usize, n_feats: usize, frame_hop_ms: f64) -> Result<Self> {
        if n_frames == 0 || n_feats == 0 {
            return Err(Error::invalid("feature matrix needs T >= 1 and F >= 1"));
        }
        if data.len() != n_frames * n_feats {
            return Err(Error::shape(format!(
                "{} values for a {n_frames}x{n_feats} feature matrix",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature matrix contains non-finite values"));
        }
        Ok(FeatureMatrix {
            data,
            n_frames,
            n_feats,
            frame_hop_ms,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_feats(&self) -> usize {
        self.n_feats
    }

    pub fn frame_hop_ms(&self) -> f64 {
        self.frame_hop_ms
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * self.n_feats..(t + 1) * self.n_feats]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.n_feats)
    }
}
