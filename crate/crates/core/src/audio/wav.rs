use std::path::Path;

use super::Waveform;
use crate::error::{Error, Result};

/// Reads a RIFF/WAVE file holding 16-bit PCM mono samples.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| Error::file(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::file(
            path,
            format!("expected mono audio, found {} channels", spec.channels),
        ));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::file(
            path,
            format!(
                "expected PCM16, found {:?} with {} bits per sample",
                spec.sample_format, spec.bits_per_sample
            ),
        ));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Error::file(path, e))?;
    Waveform::new(samples, spec.sample_rate).map_err(|e| Error::file(path, e))
}

/// Writes PCM16 mono; samples are clipped to the representable range.
pub fn write_wav(path: impl AsRef<Path>, wav: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wav.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| Error::file(path, e))?;
    for &s in wav.samples() {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(|e| Error::file(path, e))?;
    }
    writer.finalize().map_err(|e| Error::file(path, e))
}
