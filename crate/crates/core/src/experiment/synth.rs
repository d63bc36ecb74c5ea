//! Harmonic-plus-noise stand-in corpus.
//!
//! Each class fixes a prosodic recipe (base f0, vibrato, f0 glide, energy
//! envelope, spectral tilt); each speaker scales f0 and formant positions and
//! speaks slightly faster or slower. Speakers are spread evenly over the
//! pseudo-sessions so leave-one-session-out folds are speaker independent.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::write_wav;
use crate::error::{Error, Result};
use crate::experiment::manifest::{write_manifest, SegmentRecord};
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Envelope {
    Flat,
    /// Sinusoidal amplitude modulation.
    Sine { rate_hz: f64, depth: f64 },
    /// Syllable-like on/off pulses.
    Pulses { rate_hz: f64, duty: f64 },
    /// Exponential decay after the onset.
    Decay { per_sec: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassParams {
    pub name: String,
    pub f0_hz: f64,
    pub f0_mod_rate_hz: f64,
    /// Relative vibrato depth.
    pub f0_mod_depth: f64,
    /// Relative f0 change from segment start to end.
    pub f0_glide: f64,
    pub envelope: Envelope,
    pub tilt_db_per_octave: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub classes: Vec<ClassParams>,
    pub segments_per_class: usize,
    /// Seconds, inclusive range.
    pub duration_range: (f64, f64),
    pub n_speakers: usize,
    pub n_sessions: usize,
    /// Log-uniform half-range of the per-speaker f0 scale.
    pub speaker_f0_spread: f64,
    /// Log-uniform half-range of the per-speaker formant scale.
    pub speaker_formant_spread: f64,
    /// Log-uniform half-range of the per-speaker speaking-rate factor.
    pub speaker_rate_spread: f64,
    /// Amplitude of the stationary background noise.
    pub noise_floor: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: default_classes(),
            segments_per_class: 200,
            duration_range: (1.5, 3.5),
            n_speakers: 10,
            n_sessions: 5,
            speaker_f0_spread: 0.15,
            speaker_formant_spread: 0.12,
            speaker_rate_spread: 0.1,
            noise_floor: 0.002,
            sample_rate: 16_000,
            seed: 0,
        }
    }
}

pub fn default_classes() -> Vec<ClassParams> {
    vec![
        ClassParams {
            name: "angry".into(),
            f0_hz: 230.0,
            f0_mod_rate_hz: 6.0,
            f0_mod_depth: 0.06,
            f0_glide: -0.1,
            envelope: Envelope::Pulses { rate_hz: 5.0, duty: 0.5 },
            tilt_db_per_octave: -3.0,
        },
        ClassParams {
            name: "happy".into(),
            f0_hz: 260.0,
            f0_mod_rate_hz: 2.5,
            f0_mod_depth: 0.12,
            f0_glide: 0.25,
            envelope: Envelope::Sine { rate_hz: 3.0, depth: 0.6 },
            tilt_db_per_octave: -5.0,
        },
        ClassParams {
            name: "neutral".into(),
            f0_hz: 140.0,
            f0_mod_rate_hz: 0.0,
            f0_mod_depth: 0.0,
            f0_glide: 0.0,
            envelope: Envelope::Flat,
            tilt_db_per_octave: -8.0,
        },
        ClassParams {
            name: "sad".into(),
            f0_hz: 110.0,
            f0_mod_rate_hz: 1.0,
            f0_mod_depth: 0.03,
            f0_glide: -0.2,
            envelope: Envelope::Decay { per_sec: 0.6 },
            tilt_db_per_octave: -12.0,
        },
    ]
}

const FORMANTS_HZ: [f64; 3] = [500.0, 1500.0, 2500.0];
const FORMANT_BW_HZ: [f64; 3] = [120.0, 180.0, 250.0];
const MAX_HARMONIC_HZ: f64 = 7500.0;
/// Harmonic amplitudes are refreshed every this many samples.
const BLOCK: usize = 80;

#[derive(Debug, Clone, Copy)]
struct Speaker {
    f0_scale: f64,
    formant_scale: f64,
    rate: f64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::Config("synthetic spec needs at least 2 classes".into()));
        }
        for (i, a) in self.classes.iter().enumerate() {
            if a.f0_hz <= 0.0 || a.name.is_empty() {
                return Err(Error::Config(format!("class {:?}: f0 must be positive", a.name)));
            }
            for b in &self.classes[i + 1..] {
                if a.name == b.name {
                    return Err(Error::Config(format!("duplicate class name {:?}", a.name)));
                }
                let same = ClassParams {
                    name: b.name.clone(),
                    ..a.clone()
                };
                if &same == b {
                    return Err(Error::Config(format!(
                        "classes {:?} and {:?} share all acoustic parameters",
                        a.name, b.name
                    )));
                }
            }
        }
        let (lo, hi) = self.duration_range;
        if !(lo > 0.05 && hi >= lo) {
            return Err(Error::Config(format!("bad duration range {:?}", self.duration_range)));
        }
        if self.n_sessions == 0 || self.n_speakers < self.n_sessions {
            return Err(Error::Config(format!(
                "{} speakers cannot fill {} sessions",
                self.n_speakers, self.n_sessions
            )));
        }
        if self.segments_per_class == 0 || self.sample_rate < 8000 {
            return Err(Error::Config("need segments and a sample rate of at least 8 kHz".into()));
        }
        Ok(())
    }

    pub fn n_segments(&self) -> usize {
        self.classes.len() * self.segments_per_class
    }

    /// Session index of a speaker: contiguous, even partition.
    pub fn session_of(&self, speaker: usize) -> usize {
        speaker * self.n_sessions / self.n_speakers
    }

    fn speaker(&self, j: usize) -> Speaker {
        let mut rng = stream(self.seed, "synth.speaker", &[j as u64]);
        let mut log_uniform = |spread: f64| {
            if spread > 0.0 {
                rng.gen_range(-spread..=spread).exp()
            } else {
                1.0
            }
        };
        Speaker {
            f0_scale: log_uniform(self.speaker_f0_spread),
            formant_scale: log_uniform(self.speaker_formant_spread),
            rate: log_uniform(self.speaker_rate_spread),
        }
    }

    /// Record metadata of segment `i` of class `c` (path relative to the
    /// output directory).
    pub fn record(&self, c: usize, i: usize) -> SegmentRecord {
        let speaker = i % self.n_speakers;
        let id = format!("spk{speaker:02}_{}_{i:04}", self.classes[c].name);
        SegmentRecord {
            path: format!("wav/{id}.wav").into(),
            id,
            label: self.classes[c].name.clone(),
            session: format!("Ses{:02}", self.session_of(speaker) + 1),
            speaker: format!("spk{speaker:02}"),
            duration: self.duration(c, i),
        }
    }

    fn duration(&self, c: usize, i: usize) -> f64 {
        let mut rng = stream(self.seed, "synth.duration", &[c as u64, i as u64]);
        let (lo, hi) = self.duration_range;
        let n = (rng.gen_range(lo..=hi) * f64::from(self.sample_rate)).round();
        n / f64::from(self.sample_rate)
    }

    /// Waveform of segment `i` of class `c`, in [-1, 1].
    pub fn synthesize(&self, c: usize, i: usize) -> Vec<f32> {
        let class = &self.classes[c];
        let spk = self.speaker(i % self.n_speakers);
        let sr = f64::from(self.sample_rate);
        let n = (self.duration(c, i) * sr).round() as usize;
        let mut rng = stream(self.seed, "synth.segment", &[c as u64, i as u64]);
        let f0_base = class.f0_hz * spk.f0_scale * rng.gen_range(0.95..1.05);
        let vib_phase = rng.gen_range(0.0..2.0 * PI);
        let env_phase = rng.gen_range(0.0..1.0);
        let mod_rate = class.f0_mod_rate_hz * spk.rate;
        let formants: Vec<f64> = FORMANTS_HZ.iter().map(|f| f * spk.formant_scale).collect();
        let duration = n as f64 / sr;

        let f0_at = |t: f64| {
            let vib = 1.0 + class.f0_mod_depth * (2.0 * PI * mod_rate * t + vib_phase).sin();
            let glide = 1.0 + class.f0_glide * (t / duration - 0.5);
            f0_base * vib * glide
        };
        let envelope = |t: f64| match class.envelope {
            Envelope::Flat => 1.0,
            Envelope::Sine { rate_hz, depth } => {
                1.0 - depth * 0.5 * (1.0 - (2.0 * PI * (rate_hz * spk.rate * t + env_phase)).sin())
            }
            Envelope::Pulses { rate_hz, duty } => {
                let x = (rate_hz * spk.rate * t + env_phase).fract();
                // Raised-cosine edges, 20% of the on-time each.
                let edge = 0.2 * duty;
                let on = if x < edge {
                    0.5 - 0.5 * (PI * x / edge).cos()
                } else if x < duty - edge {
                    1.0
                } else if x < duty {
                    0.5 + 0.5 * (PI * (x - duty + edge) / edge).cos()
                } else {
                    0.0
                };
                0.05 + 0.95 * on
            }
            Envelope::Decay { per_sec } => (-per_sec * t).exp(),
        };
        let amplitude = |freq: f64, k: usize| {
            let tilt = 10f64.powf(class.tilt_db_per_octave * (k as f64).log2() / 20.0);
            let resonance: f64 = formants
                .iter()
                .zip(FORMANT_BW_HZ)
                .map(|(&fc, bw)| (-0.5 * ((freq - fc) / bw).powi(2)).exp())
                .sum();
            tilt * (0.15 + resonance)
        };

        let fade = (0.02 * sr) as usize;
        let mut out = Vec::with_capacity(n);
        let mut theta = 0.0f64;
        let mut amps: Vec<f64> = Vec::new();
        for start in (0..n).step_by(BLOCK) {
            let t_mid = (start + BLOCK / 2) as f64 / sr;
            let f0_mid = f0_at(t_mid);
            let n_harm = ((MAX_HARMONIC_HZ / f0_mid) as usize).clamp(1, 64);
            amps.clear();
            amps.extend((1..=n_harm).map(|k| amplitude(k as f64 * f0_mid, k)));
            for s in start..(start + BLOCK).min(n) {
                let t = s as f64 / sr;
                theta = (theta + 2.0 * PI * f0_at(t) / sr) % (2.0 * PI);
                // sin(k theta) by the Chebyshev recurrence.
                let (s1, two_c) = (theta.sin(), 2.0 * theta.cos());
                let (mut prev, mut cur, mut harm) = (0.0, s1, 0.0);
                for &a in &amps {
                    harm += a * cur;
                    let next = two_c * cur - prev;
                    prev = cur;
                    cur = next;
                }
                let noise: f64 = StandardNormal.sample(&mut rng);
                let floor: f64 = StandardNormal.sample(&mut rng);
                let ramp = (s.min(n - 1 - s) as f64 / fade as f64).min(1.0);
                let voiced = envelope(t) * ramp * (0.12 * harm + 0.01 * noise);
                out.push(voiced + self.noise_floor * floor);
            }
        }
        let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let gain = if peak > 0.0 { 0.8 / peak } else { 1.0 };
        out.into_iter().map(|v| (v * gain) as f32).collect()
    }
}

/// Writes `wav/*.wav` and `manifest.csv` under `out_dir`; returns the records
/// with absolute paths.
pub fn generate_synthetic_dataset(spec: &SyntheticSpec, out_dir: &Path) -> Result<Vec<SegmentRecord>> {
    spec.validate()?;
    let wav_dir = out_dir.join("wav");
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let jobs: Vec<(usize, usize)> = (0..spec.classes.len())
        .flat_map(|c| (0..spec.segments_per_class).map(move |i| (c, i)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(c, i)| {
            let mut rec = spec.record(c, i);
            rec.path = out_dir.join(&rec.path);
            write_wav(&rec.path, &spec.synthesize(c, i), spec.sample_rate)?;
            Ok(rec)
        })
        .collect::<Result<Vec<_>>>()?;
    write_manifest(&out_dir.join("manifest.csv"), &records)?;
    Ok(records)
}
