//! Training pool, chunking and batch assembly.

use rand::Rng as _;
use rayon::prelude::*;

use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::model::EmotionClassifier;
use crate::rng::stream;
use crate::specaug::{apply_masks, AugmentationPolicy};
use crate::tensor::Tensor;

/// One training example: a segment, either original (`variant == 0`) or
/// masked with `policies[variant - 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolItem {
    pub segment: usize,
    pub variant: usize,
}

/// Originals, plus one copy per policy when augmenting.
pub fn training_pool(segments: &[usize], n_policies: usize, augment: bool) -> Vec<PoolItem> {
    let variants = if augment { n_policies + 1 } else { 1 };
    segments
        .iter()
        .flat_map(|&segment| (0..variants).map(move |variant| PoolItem { segment, variant }))
        .collect()
}

/// `len` frames starting at `offset`; frames past the end of the segment are
/// zero.
pub fn chunk(spec: &MelSpectrogram, offset: usize, len: usize) -> Result<MelSpectrogram> {
    let n_mels = spec.n_mels();
    let mut frames = vec![0.0f32; len * n_mels];
    let avail = spec.n_frames().saturating_sub(offset).min(len);
    frames[..avail * n_mels].copy_from_slice(&spec.frames()[offset * n_mels..(offset + avail) * n_mels]);
    MelSpectrogram::from_frames(frames, n_mels, spec.is_normalized())
}

#[derive(Debug, Clone)]
pub struct Batch {
    /// `N x 1 x n_mels x T`.
    pub input: Tensor<f32>,
    pub labels: Vec<usize>,
    pub chunk_len: usize,
}

/// Streams a batch draws from, all derived from the training root `seed`.
#[derive(Debug, Clone, Copy)]
pub struct BatchSeeds {
    pub seed: u64,
    pub epoch: u32,
    pub batch: usize,
}

/// Assembles one batch: one chunk length for the whole batch, a random
/// offset per segment (zero when the segment is shorter than the chunk), and
/// freshly drawn masks for augmented copies.
pub fn make_batch(
    specs: &[MelSpectrogram],
    labels: &[usize],
    items: &[PoolItem],
    policies: &[AugmentationPolicy],
    chunk_lengths: &[usize],
    seeds: BatchSeeds,
) -> Result<Batch> {
    if items.is_empty() || chunk_lengths.is_empty() {
        return Err(Error::Empty("batch".into()));
    }
    let mut rng = stream(seeds.seed, "batch", &[u64::from(seeds.epoch), seeds.batch as u64]);
    let chunk_len = chunk_lengths[rng.gen_range(0..chunk_lengths.len())];
    let offsets: Vec<usize> = items
        .iter()
        .map(|it| {
            let n = specs[it.segment].n_frames();
            if n > chunk_len {
                rng.gen_range(0..=n - chunk_len)
            } else {
                0
            }
        })
        .collect();
    let chunks = items
        .par_iter()
        .zip(&offsets)
        .map(|(it, &offset)| {
            let spec = &specs[it.segment];
            if it.variant == 0 {
                return chunk(spec, offset, chunk_len);
            }
            let policy = policies
                .get(it.variant - 1)
                .ok_or_else(|| Error::Config(format!("no augmentation policy #{}", it.variant)))?;
            let mut mask_rng = stream(
                seeds.seed,
                "mask",
                &[u64::from(seeds.epoch), it.segment as u64, it.variant as u64],
            );
            let (masked, _) = apply_masks(spec, policy, &mut mask_rng)?;
            chunk(&masked, offset, chunk_len)
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&MelSpectrogram> = chunks.iter().collect();
    Ok(Batch {
        input: EmotionClassifier::batch_input(&refs)?,
        labels: items.iter().map(|it| labels[it.segment]).collect(),
        chunk_len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n_frames: usize) -> MelSpectrogram {
        let data = (0..n_frames * 32).map(|i| 1.0 + i as f32).collect();
        MelSpectrogram::from_frames(data, 32, true).unwrap()
    }

    #[test]
    fn short_segment_is_right_padded() {
        let s = ramp(90);
        let c = chunk(&s, 0, 150).unwrap();
        assert_eq!(&c.frames()[..90 * 32], s.frames());
        assert!(c.frames()[90 * 32..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pool_sizes() {
        assert_eq!(training_pool(&[3, 5], 2, false).len(), 2);
        assert_eq!(training_pool(&[3, 5], 2, true).len(), 6);
    }

    #[test]
    fn batch_uses_one_allowed_length() {
        let specs = vec![ramp(400), ramp(90), ramp(220)];
        let items = training_pool(&[0, 1, 2], 2, true);
        let policies = [AugmentationPolicy::conservative(), AugmentationPolicy::aggressive()];
        for b in 0..20 {
            let seeds = BatchSeeds { seed: 4, epoch: 1, batch: b };
            let batch = make_batch(&specs, &[0, 1, 2], &items, &policies, &[150, 200, 250, 300], seeds).unwrap();
            assert!([150, 200, 250, 300].contains(&batch.chunk_len));
            assert_eq!(batch.input.shape(), &[9, 1, 32, batch.chunk_len]);
            let again = make_batch(&specs, &[0, 1, 2], &items, &policies, &[150, 200, 250, 300], seeds).unwrap();
            assert_eq!(batch.input, again.input);
        }
    }
}
