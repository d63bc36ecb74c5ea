//! 16-bit mono PCM WAV ingestion and output.

use std::path::Path;

use crate::dsp::AudioSegment;
use crate::error::{Error, Result};

const PCM16_SCALE: f32 = 32768.0;

fn map_hound(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) => Error::io(path, e),
        other => Error::UnsupportedFormat(format!("{}: {other}", path.display())),
    }
}

/// Reads a RIFF/WAVE file holding 16-bit little-endian mono PCM.
///
/// Samples are scaled by 1/32768. Multi-channel input is rejected rather than
/// downmixed.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioSegment> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: expected 16-bit PCM, found {:?} {}-bit",
            path.display(),
            spec.sample_format,
            spec.bits_per_sample
        )));
    }
    if spec.channels != 1 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: expected mono, found {} channels",
            path.display(),
            spec.channels
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f32::from(v) / PCM16_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| map_hound(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    AudioSegment::new(id, samples, spec.sample_rate)
}

/// Quantizes to 16-bit PCM (round to nearest, clipped) and writes a mono WAV.
pub fn write_wav(path: impl AsRef<Path>, samples: &[f32], sample_rate: u32) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in samples {
        let q = (s * PCM16_SCALE).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}
