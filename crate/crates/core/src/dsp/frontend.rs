//! Framing, log-mel extraction and segment-level normalization.
//!
//! The front-end computes in double precision and stores the result as f32.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::dsp::mel::MelFilterbank;
use crate::dsp::AudioSegment;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontendConfig {
    pub window_ms: u32,
    pub hop_ms: u32,
    pub n_mels: usize,
    pub fft_size: usize,
    pub f_min: f64,
    /// `None` means the Nyquist frequency of the input.
    pub f_max: Option<f64>,
    pub log_floor: f64,
    pub norm_epsilon: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            window_ms: 25,
            hop_ms: 10,
            n_mels: 128,
            fft_size: 1024,
            f_min: 20.0,
            f_max: None,
            log_floor: 1e-10,
            norm_epsilon: 1e-5,
        }
    }
}

impl FrontendConfig {
    pub fn window_len(&self, sample_rate: u32) -> usize {
        (u64::from(self.window_ms) * u64::from(sample_rate) / 1000) as usize
    }

    pub fn hop_len(&self, sample_rate: u32) -> usize {
        (u64::from(self.hop_ms) * u64::from(sample_rate) / 1000) as usize
    }

    pub fn f_max_for(&self, sample_rate: u32) -> f64 {
        self.f_max.unwrap_or(f64::from(sample_rate) / 2.0)
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if sample_rate == 0 {
            return bad("sample rate must be positive".into());
        }
        let win = self.window_len(sample_rate);
        let hop = self.hop_len(sample_rate);
        if win == 0 || hop == 0 {
            return bad(format!(
                "window ({} ms) and hop ({} ms) must span at least one sample at {sample_rate} Hz",
                self.window_ms, self.hop_ms
            ));
        }
        if !self.fft_size.is_power_of_two() || self.fft_size < win {
            return bad(format!(
                "fft_size {} must be a power of two >= window length {win}",
                self.fft_size
            ));
        }
        if self.n_mels == 0 {
            return bad("n_mels must be positive".into());
        }
        let f_max = self.f_max_for(sample_rate);
        if !(self.f_min >= 0.0 && self.f_min < f_max && f_max <= f64::from(sample_rate) / 2.0) {
            return bad(format!(
                "need 0 <= f_min ({}) < f_max ({f_max}) <= sample_rate/2",
                self.f_min
            ));
        }
        if !(self.log_floor > 0.0) || !(self.norm_epsilon > 0.0) {
            return bad("log_floor and norm_epsilon must be positive".into());
        }
        Ok(())
    }
}

/// Number of full analysis windows that fit in `n_samples`.
pub fn frame_count(n_samples: usize, config: &FrontendConfig, sample_rate: u32) -> Result<usize> {
    let win = config.window_len(sample_rate);
    let hop = config.hop_len(sample_rate);
    if win == 0 || hop == 0 {
        return Err(Error::Config(format!(
            "window/hop shorter than one sample at {sample_rate} Hz"
        )));
    }
    if n_samples < win {
        return Err(Error::SegmentTooShort {
            n_samples,
            window: win,
        });
    }
    Ok((n_samples - win) / hop + 1)
}

/// Time-major `T x n_mels` matrix of log-mel energies.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    frames: Vec<f32>,
    n_frames: usize,
    n_mels: usize,
    normalized: bool,
}

impl MelSpectrogram {
    /// Builds a spectrogram from raw row-major data. The `normalized` flag is
    /// taken as given.
    pub fn from_frames(frames: Vec<f32>, n_mels: usize, normalized: bool) -> Result<Self> {
        if n_mels == 0 || frames.is_empty() || frames.len() % n_mels != 0 {
            return Err(Error::Shape(format!(
                "{} values do not form rows of {n_mels} channels",
                frames.len()
            )));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("spectrogram construction".into()));
        }
        Ok(Self {
            n_frames: frames.len() / n_mels,
            frames,
            n_mels,
            normalized,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn frames(&self) -> &[f32] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.frames[t * self.n_mels..(t + 1) * self.n_mels]
    }

    pub fn get(&self, t: usize, m: usize) -> f32 {
        self.frames[t * self.n_mels + m]
    }

    pub(crate) fn frames_mut(&mut self) -> &mut [f32] {
        &mut self.frames
    }

    pub fn into_frames(self) -> Vec<f32> {
        self.frames
    }
}

/// Reusable extractor holding the FFT plan, window and filterbank for one
/// (config, sample rate) pair.
pub struct LogMelExtractor {
    config: FrontendConfig,
    sample_rate: u32,
    window: Vec<f64>,
    hop: usize,
    fft: Arc<dyn Fft<f64>>,
    filterbank: MelFilterbank,
}

impl std::fmt::Debug for LogMelExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LogMelExtractor")
            .field("config", &self.config)
            .field("sample_rate", &self.sample_rate)
            .finish()
    }
}

impl LogMelExtractor {
    pub fn new(config: &FrontendConfig, sample_rate: u32) -> Result<Self> {
        config.validate(sample_rate)?;
        let win = config.window_len(sample_rate);
        let window = (0..win)
            .map(|n| {
                if win == 1 {
                    1.0
                } else {
                    0.54 - 0.46 * (2.0 * PI * n as f64 / (win - 1) as f64).cos()
                }
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(config.fft_size);
        let filterbank = MelFilterbank::new(
            config.n_mels,
            config.fft_size,
            sample_rate,
            config.f_min,
            config.f_max_for(sample_rate),
        );
        Ok(Self {
            config: config.clone(),
            sample_rate,
            window,
            hop: config.hop_len(sample_rate),
            fft,
            filterbank,
        })
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn extract(&self, audio: &AudioSegment) -> Result<MelSpectrogram> {
        if audio.sample_rate != self.sample_rate {
            return Err(Error::Config(format!(
                "extractor built for {} Hz, audio is {} Hz (resampling is not supported)",
                self.sample_rate, audio.sample_rate
            )));
        }
        let n_frames = frame_count(audio.samples.len(), &self.config, self.sample_rate)?;
        let n_mels = self.config.n_mels;
        let n_bins = self.filterbank.n_bins();
        let floor = self.config.log_floor;

        let mut buf = vec![Complex::new(0.0, 0.0); self.config.fft_size];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; n_bins];
        let mut energies = vec![0.0; n_mels];
        let mut frames = Vec::with_capacity(n_frames * n_mels);

        for t in 0..n_frames {
            let offset = t * self.hop;
            let chunk = &audio.samples[offset..offset + self.window.len()];
            for (slot, (&s, &w)) in buf.iter_mut().zip(chunk.iter().zip(&self.window)) {
                *slot = Complex::new(f64::from(s) * w, 0.0);
            }
            buf[self.window.len()..].fill(Complex::new(0.0, 0.0));
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            self.filterbank.apply(&power, &mut energies);
            frames.extend(energies.iter().map(|&e| e.max(floor).ln() as f32));
        }
        MelSpectrogram::from_frames(frames, n_mels, false)
    }
}

pub fn log_mel(audio: &AudioSegment, config: &FrontendConfig) -> Result<MelSpectrogram> {
    LogMelExtractor::new(config, audio.sample_rate)?.extract(audio)
}

/// Per-channel mean and variance normalization over the frames of one
/// segment (population statistics, denominator clamped at `norm_epsilon`).
pub fn normalize_segment(spec: &MelSpectrogram, norm_epsilon: f64) -> Result<MelSpectrogram> {
    if spec.normalized {
        return Err(Error::AlreadyNormalized);
    }
    let mut out = spec.clone();
    normalize_in_place(&mut out, norm_epsilon);
    Ok(out)
}

pub(crate) fn normalize_in_place(spec: &mut MelSpectrogram, norm_epsilon: f64) {
    let (t_len, n_mels) = (spec.n_frames, spec.n_mels);
    for m in 0..n_mels {
        let mean = (0..t_len)
            .map(|t| f64::from(spec.frames[t * n_mels + m]))
            .sum::<f64>()
            / t_len as f64;
        let var = (0..t_len)
            .map(|t| {
                let d = f64::from(spec.frames[t * n_mels + m]) - mean;
                d * d
            })
            .sum::<f64>()
            / t_len as f64;
        let denom = var.sqrt().max(norm_epsilon);
        for t in 0..t_len {
            let v = &mut spec.frames[t * n_mels + m];
            *v = ((f64::from(*v) - mean) / denom) as f32;
        }
    }
    spec.normalized = true;
}
