//! Audio front-end: WAV ingestion, log-mel spectrograms and their dumps.

pub mod dump;
mod frontend;
pub mod mel;
mod wav;

pub use frontend::{
    frame_count, log_mel, normalize_segment, FrontendConfig, LogMelExtractor, MelSpectrogram,
};
pub(crate) use frontend::normalize_in_place;
pub use wav::{load_wav, write_wav};

use crate::error::{Error, Result};

/// Mono waveform with samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSegment {
    pub id: String,
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioSegment {
    pub fn new(id: impl Into<String>, samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidAudio("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::InvalidAudio("no samples".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidAudio("non-finite sample".into()));
        }
        Ok(Self {
            id: id.into(),
            samples,
            sample_rate,
        })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}
