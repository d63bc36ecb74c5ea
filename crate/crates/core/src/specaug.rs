//! Time and frequency masking of log-mel spectrograms.
//!
//! A frequency mask covers channels `[f0, f0 + f)` with `f ~ U{0..F}` and
//! `f0 ~ U{0..n_mels - f}`; a time mask covers frames `[t0, t0 + t)` with
//! `t ~ U{0..W_eff}`, `t0 ~ U{0..T - t}` and `W_eff = min(W, floor(p * T))`.
//! Masked cells are set to 0.0, which is the channel mean of a normalized
//! spectrogram.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyName {
    None,
    Conservative,
    Aggressive,
    Custom,
}

impl fmt::Display for PolicyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyName::None => "none",
            PolicyName::Conservative => "conservative",
            PolicyName::Aggressive => "aggressive",
            PolicyName::Custom => "custom",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPolicy {
    pub name: PolicyName,
    /// Maximum frequency-mask width `F`, in channels.
    pub freq_width: usize,
    /// Maximum time-mask width `W`, in frames.
    pub time_width: usize,
    /// Upper bound `p` on a time mask as a fraction of the segment length.
    pub time_ratio: f64,
    pub n_freq_masks: usize,
    pub n_time_masks: usize,
}

impl AugmentationPolicy {
    pub fn none() -> Self {
        Self {
            name: PolicyName::None,
            freq_width: 0,
            time_width: 0,
            time_ratio: 0.0,
            n_freq_masks: 0,
            n_time_masks: 0,
        }
    }

    pub fn conservative() -> Self {
        Self {
            name: PolicyName::Conservative,
            freq_width: 15,
            time_width: 50,
            time_ratio: 0.2,
            n_freq_masks: 2,
            n_time_masks: 2,
        }
    }

    pub fn aggressive() -> Self {
        Self {
            name: PolicyName::Aggressive,
            freq_width: 27,
            time_width: 70,
            time_ratio: 0.2,
            n_freq_masks: 2,
            n_time_masks: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.time_ratio) {
            return Err(Error::Config(format!(
                "time mask ratio {} outside [0, 1]",
                self.time_ratio
            )));
        }
        Ok(())
    }
}

impl FromStr for AugmentationPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::none()),
            "conservative" => Ok(Self::conservative()),
            "aggressive" => Ok(Self::aggressive()),
            other => Err(Error::Config(format!(
                "unknown augmentation policy {other:?} (expected none, conservative or aggressive)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskAxis {
    Time,
    Frequency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskInstance {
    pub axis: MaskAxis,
    pub start: usize,
    pub width: usize,
}

/// `min(W, floor(p * T))`.
pub fn effective_time_width(max_width: usize, ratio: f64, n_frames: usize) -> usize {
    // The epsilon absorbs representation error in p (0.2 * 35 must give 7).
    let bound = (ratio * n_frames as f64 + 1e-9).floor() as usize;
    max_width.min(bound)
}

fn sample_mask(rng: &mut Rng, bound: usize, len: usize, axis: MaskAxis) -> Result<MaskInstance> {
    if bound > len {
        return Err(Error::MaskTooWide { bound, len });
    }
    let width = rng.gen_range(0..=bound);
    // An empty mask still gets a start inside the axis.
    let start = rng.gen_range(0..=len.saturating_sub(width.max(1)));
    Ok(MaskInstance { axis, start, width })
}

pub fn sample_frequency_mask(rng: &mut Rng, max_width: usize, n_mels: usize) -> Result<MaskInstance> {
    sample_mask(rng, max_width, n_mels, MaskAxis::Frequency)
}

pub fn sample_time_mask(rng: &mut Rng, effective_width: usize, n_frames: usize) -> Result<MaskInstance> {
    sample_mask(rng, effective_width, n_frames, MaskAxis::Time)
}

/// Draws the policy's frequency masks followed by its time masks.
pub fn sample_masks(
    policy: &AugmentationPolicy,
    n_frames: usize,
    n_mels: usize,
    rng: &mut Rng,
) -> Result<Vec<MaskInstance>> {
    policy.validate()?;
    let w_eff = effective_time_width(policy.time_width, policy.time_ratio, n_frames);
    let mut masks = Vec::with_capacity(policy.n_freq_masks + policy.n_time_masks);
    for _ in 0..policy.n_freq_masks {
        masks.push(sample_frequency_mask(rng, policy.freq_width, n_mels)?);
    }
    for _ in 0..policy.n_time_masks {
        masks.push(sample_time_mask(rng, w_eff, n_frames)?);
    }
    Ok(masks)
}

/// Zeroes the cells covered by `masks` in a row-major `n_frames x n_mels`
/// buffer.
pub fn fill_masks(frames: &mut [f32], n_mels: usize, masks: &[MaskInstance]) {
    let n_frames = frames.len() / n_mels;
    for mask in masks {
        match mask.axis {
            MaskAxis::Frequency => {
                for t in 0..n_frames {
                    frames[t * n_mels + mask.start..t * n_mels + mask.start + mask.width].fill(0.0);
                }
            }
            MaskAxis::Time => {
                frames[mask.start * n_mels..(mask.start + mask.width) * n_mels].fill(0.0);
            }
        }
    }
}

/// Returns a masked copy of `spec` together with the masks that were drawn.
pub fn apply_masks(
    spec: &MelSpectrogram,
    policy: &AugmentationPolicy,
    rng: &mut Rng,
) -> Result<(MelSpectrogram, Vec<MaskInstance>)> {
    if !spec.is_normalized() {
        return Err(Error::NotNormalized("masking"));
    }
    let masks = sample_masks(policy, spec.n_frames(), spec.n_mels(), rng)?;
    let mut out = spec.clone();
    fill_masks(out.frames_mut(), spec.n_mels(), &masks);
    Ok((out, masks))
}
