use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::manifest::{Manifest, ManifestEntry, Unit};
use crate::audio::{write_wav, Waveform};
use crate::ctc::Alphabet;
use crate::error::{Error, Result};
use crate::seed::{derive_seed, hash_label};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    /// Vocabulary size K; symbols are `a`, `b`, ...
    pub n_symbols: usize,
    pub n_utterances: usize,
    pub min_symbols: usize,
    pub max_symbols: usize,
    /// Standard deviation of additive white noise, in sample units.
    pub noise_level: f64,
    pub sample_rate: u32,
    pub segment_ms: f64,
    /// Segment durations vary uniformly by up to this much either way.
    pub jitter_ms: f64,
    pub gap_ms: (f64, f64),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_symbols: 8,
            n_utterances: 100,
            min_symbols: 2,
            max_symbols: 5,
            noise_level: 0.01,
            sample_rate: 16000,
            segment_ms: 80.0,
            jitter_ms: 20.0,
            gap_ms: (20.0, 50.0),
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.n_symbols < 2 || self.n_symbols > 26 {
            return Err(Error::invalid(format!(
                "synthetic vocabulary needs 2..=26 symbols, got {}",
                self.n_symbols
            )));
        }
        if self.n_utterances == 0 {
            return Err(Error::invalid("need at least one utterance"));
        }
        if self.min_symbols == 0 || self.min_symbols > self.max_symbols {
            return Err(Error::invalid("need 1 <= min_symbols <= max_symbols"));
        }
        if !(self.noise_level >= 0.0) || self.sample_rate == 0 {
            return Err(Error::invalid("noise level must be >= 0 and sample rate > 0"));
        }
        if self.jitter_ms >= self.segment_ms || self.gap_ms.0 > self.gap_ms.1 || self.gap_ms.0 < 0.0 {
            return Err(Error::invalid("segment, jitter and gap durations are inconsistent"));
        }
        Ok(())
    }
}

pub fn synthetic_alphabet(n_symbols: usize) -> Result<Alphabet> {
    Alphabet::new((0..n_symbols as u8).map(|i| (b'a' + i) as char))
}

/// Tone frequency of symbol `k`: log-spaced between 300 Hz and 3 kHz.
pub fn symbol_frequency(k: usize, n_symbols: usize) -> f64 {
    let span = (n_symbols.max(2) - 1) as f64;
    300.0 * 10f64.powf(k as f64 / span)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthUtterance {
    pub id: String,
    /// Space-separated symbols (phone unit).
    pub text: String,
    pub wav: Waveform,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub alphabet: Alphabet,
    pub utterances: Vec<SynthUtterance>,
}

fn render_tone(out: &mut Vec<f64>, freq: f64, n: usize, sr: f64) {
    let ramp = ((0.005 * sr) as usize).min(n / 2).max(1);
    let phase0 = out.len();
    for i in 0..n {
        let env = if i < ramp {
            0.5 - 0.5 * (PI * i as f64 / ramp as f64).cos()
        } else if i >= n - ramp {
            0.5 - 0.5 * (PI * (n - 1 - i) as f64 / ramp as f64).cos()
        } else {
            1.0
        };
        let t = (phase0 + i) as f64 / sr;
        let v = 0.5 * (2.0 * PI * freq * t).sin() + 0.15 * (4.0 * PI * freq * t).sin();
        out.push(env * v);
    }
}

/// Random symbol strings rendered as tone segments separated by short
/// silences, with optional white noise. Deterministic given the config.
pub fn generate_synthetic_corpus(cfg: &SynthConfig, id_prefix: &str) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let alphabet = synthetic_alphabet(cfg.n_symbols)?;
    let sr = cfg.sample_rate as f64;
    let ms = |v: f64| (v * sr / 1000.0).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, hash_label(id_prefix)));

    let mut utterances = Vec::with_capacity(cfg.n_utterances);
    for u in 0..cfg.n_utterances {
        let len = rng.gen_range(cfg.min_symbols..=cfg.max_symbols);
        let symbols: Vec<usize> = (0..len).map(|_| rng.gen_range(0..cfg.n_symbols)).collect();

        let mut samples = vec![0.0; ms(rng.gen_range(30.0..80.0))];
        for (i, &k) in symbols.iter().enumerate() {
            if i > 0 {
                let gap = ms(rng.gen_range(cfg.gap_ms.0..=cfg.gap_ms.1));
                samples.resize(samples.len() + gap, 0.0);
            }
            let dur = cfg.segment_ms + rng.gen_range(-cfg.jitter_ms..=cfg.jitter_ms);
            render_tone(&mut samples, symbol_frequency(k, cfg.n_symbols), ms(dur), sr);
        }
        let tail = ms(rng.gen_range(30.0..80.0));
        samples.resize(samples.len() + tail, 0.0);
        if cfg.noise_level > 0.0 {
            for s in samples.iter_mut() {
                let n: f64 = rng.sample(StandardNormal);
                *s += cfg.noise_level * n;
            }
        }
        let samples = samples.into_iter().map(|v| v.clamp(-1.0, 1.0) as f32).collect();

        let text = symbols
            .iter()
            .map(|&k| alphabet.symbols()[k].to_string())
            .collect::<Vec<_>>()
            .join(" ");
        utterances.push(SynthUtterance {
            id: format!("{id_prefix}-{u:05}"),
            text,
            wav: Waveform::new(samples, cfg.sample_rate)?,
        });
    }
    Ok(SyntheticCorpus {
        alphabet,
        utterances,
    })
}

/// Named splits drawn from independent streams; ids are prefixed with
/// the split name so splits never share an id.
pub fn generate_synthetic_splits(
    cfg: &SynthConfig,
    splits: &[(&str, usize)],
) -> Result<Vec<SyntheticCorpus>> {
    let mut names: Vec<&str> = splits.iter().map(|s| s.0).collect();
    names.sort_unstable();
    names.dedup();
    if names.len() != splits.len() {
        return Err(Error::invalid("split names must be distinct"));
    }
    splits
        .iter()
        .map(|&(name, n)| {
            let c = SynthConfig {
                n_utterances: n,
                ..cfg.clone()
            };
            generate_synthetic_corpus(&c, name)
        })
        .collect()
}

impl SyntheticCorpus {
    /// Writes one PCM16 file per utterance plus `manifest.jsonl` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Manifest> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        let mut entries = Vec::with_capacity(self.utterances.len());
        for u in &self.utterances {
            let name = format!("{}.wav", u.id);
            write_wav(dir.join(&name), &u.wav)?;
            entries.push(ManifestEntry {
                id: u.id.clone(),
                audio: name.into(),
                text: u.text.clone(),
                unit: None,
            });
        }
        let manifest = Manifest::new(entries, Unit::Phone, dir)?;
        manifest.write(dir.join("manifest.jsonl"))?;
        Ok(manifest)
    }
}
