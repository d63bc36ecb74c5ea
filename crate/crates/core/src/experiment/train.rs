//! Training loop, speaker pretraining, emotion training and evaluation.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::experiment::batch::{chunk, make_batch, training_pool, BatchSeeds};
use crate::experiment::manifest::{ExperimentDef, SegmentRecord};
use crate::experiment::split::Fold;
use crate::metrics::ConfusionMatrix;
use crate::model::{EmotionClassifier, Pooling, ResNetConfig, TrainingMeta};
use crate::rng::{derive_seed, stream};
use crate::specaug::AugmentationPolicy;
use crate::tensor::{BatchNormConfig, LrSchedule, OptimizerState, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// One length is drawn per batch.
    pub chunk_lengths: Vec<usize>,
    pub epochs: u32,
    pub seed: u64,
    pub use_transfer_learning: bool,
    pub use_augmentation: bool,
    pub pooling: Pooling,
    /// One augmented copy per policy.
    pub policies: Vec<AugmentationPolicy>,
    pub preset: String,
    pub hidden_width: usize,
    pub momentum: f64,
    pub schedule: LrSchedule,
    /// Train the whole network after head replacement instead of the head only.
    pub fine_tune_backbone: bool,
    /// Applies to freshly built models; a pretrained backbone keeps its own.
    pub batch_norm: BatchNormConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            chunk_lengths: vec![150, 200, 250, 300],
            epochs: 10,
            seed: 0,
            use_transfer_learning: false,
            use_augmentation: true,
            pooling: Pooling::Statistics,
            policies: vec![AugmentationPolicy::conservative(), AugmentationPolicy::aggressive()],
            preset: "lite".into(),
            hidden_width: 256,
            momentum: 0.9,
            schedule: LrSchedule::default(),
            fine_tune_backbone: false,
            batch_norm: BatchNormConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.chunk_lengths.is_empty() || self.chunk_lengths.contains(&0) {
            return Err(Error::Config("chunk lengths must be a non-empty set of positive lengths".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.schedule.initial <= 0.0 {
            return Err(Error::Config("momentum must be in [0, 1) and the learning rate positive".into()));
        }
        if !(0.0..=1.0).contains(&self.batch_norm.momentum) || self.batch_norm.eps <= 0.0 {
            return Err(Error::Config("batch-norm momentum must be in [0, 1] and eps positive".into()));
        }
        for p in &self.policies {
            p.validate()?;
        }
        Ok(())
    }

    pub fn model_config(&self, n_mels: usize) -> Result<ResNetConfig> {
        let mut cfg = ResNetConfig::from_preset(&self.preset)?;
        cfg.hidden_width = self.hidden_width;
        cfg.n_mels = n_mels;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: u32,
    pub lr: f64,
    /// Mean cross-entropy over the epoch's examples.
    pub loss: f64,
    /// Accuracy of the training-mode predictions on the training chunks.
    pub train_wa: f64,
}

/// Normalized spectrograms with class indices, shared by all folds.
#[derive(Debug, Clone, Copy)]
pub struct Dataset<'a> {
    pub specs: &'a [MelSpectrogram],
    pub labels: &'a [usize],
}

impl Dataset<'_> {
    pub fn n_mels(&self) -> Result<usize> {
        self.specs
            .first()
            .map(MelSpectrogram::n_mels)
            .ok_or_else(|| Error::Empty("dataset".into()))
    }
}

fn argmax(logits: &[f32]) -> usize {
    // First maximum wins, so ties go to the lowest class index.
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// SGD over `train` for `cfg.epochs` epochs. `stream_id` separates the random
/// streams of different folds and tasks under one root seed.
pub fn train_model(
    model: &mut EmotionClassifier,
    data: Dataset<'_>,
    train: &[usize],
    cfg: &TrainConfig,
    stream_id: u64,
    progress: &mut dyn FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    let k = model.n_classes();
    if let Some(&label) = train.iter().map(|&i| &data.labels[i]).find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    let root = derive_seed(cfg.seed, "train", &[stream_id]);
    let mut opt = OptimizerState::<f32>::new(cfg.momentum, cfg.schedule.initial);
    let base_pool = training_pool(train, cfg.policies.len(), cfg.use_augmentation);
    let mut history = Vec::with_capacity(cfg.epochs as usize);
    for epoch in 1..=cfg.epochs {
        opt.epoch = epoch;
        opt.lr = cfg.schedule.lr_at_epoch(epoch);
        let mut pool = base_pool.clone();
        pool.shuffle(&mut stream(root, "shuffle", &[u64::from(epoch)]));
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for (b, items) in pool.chunks(cfg.batch_size).enumerate() {
            let seeds = BatchSeeds { seed: root, epoch, batch: b };
            let batch = make_batch(data.specs, data.labels, items, &cfg.policies, &cfg.chunk_lengths, seeds)?;
            let mut tape = Tape::new();
            let fwd = model.forward_train(&mut tape, batch.input)?;
            let loss = tape.softmax_cross_entropy(fwd.logits, &batch.labels)?;
            let loss_value = f64::from(tape.value(loss).data()[0]);
            if !loss_value.is_finite() {
                return Err(Error::NonFinite(format!("training loss (epoch {epoch}, batch {b})")));
            }
            loss_sum += loss_value * items.len() as f64;
            correct += tape
                .value(fwd.logits)
                .data()
                .chunks_exact(k)
                .zip(&batch.labels)
                .filter(|(row, &l)| argmax(row) == l)
                .count();
            tape.backward(loss)?;
            for (i, var) in fwd.param_vars.iter().enumerate() {
                if !model.is_trainable(i) {
                    continue;
                }
                let Some(grad) = tape.grad(*var) else { continue };
                opt.step(i, model.params_mut()[i].value.data_mut(), grad)?;
            }
        }
        let stats = EpochStats {
            epoch,
            lr: opt.lr,
            loss: loss_sum / pool.len() as f64,
            train_wa: correct as f64 / pool.len() as f64,
        };
        progress(&stats);
        history.push(stats);
    }
    Ok(history)
}

/// Speaker-classification pretext task over every record of the manifest.
pub fn pretrain_speaker(
    records: &[SegmentRecord],
    specs: &[MelSpectrogram],
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(&EpochStats),
) -> Result<(EmotionClassifier, Vec<EpochStats>, TrainingMeta)> {
    let def = ExperimentDef::speakers(records);
    if def.n_classes() < 2 {
        return Err(Error::Manifest(format!(
            "speaker pretraining needs at least 2 speakers, manifest has {}",
            def.n_classes()
        )));
    }
    let labels = def.speaker_labels(records)?;
    let data = Dataset { specs, labels: &labels };
    let model_cfg = cfg.model_config(data.n_mels()?)?;
    let mut rng = stream(cfg.seed, "init.speaker", &[]);
    let mut model = EmotionClassifier::build(&model_cfg, cfg.pooling, def.n_classes(), &mut rng)?;
    model.set_bn_config(cfg.batch_norm);
    let all: Vec<usize> = (0..records.len()).collect();
    let history = train_model(&mut model, data, &all, cfg, u64::MAX, progress)?;
    let meta = TrainingMeta {
        task: "speaker".into(),
        labels: def.classes,
        epochs: cfg.epochs,
        seed: cfg.seed,
        frontend: None,
    };
    Ok((model, history, meta))
}

/// Builds the fold's model (fresh, or the pretrained backbone with a new head)
/// and trains it.
pub fn train_emotion(
    cfg: &TrainConfig,
    data: Dataset<'_>,
    fold: &Fold,
    n_classes: usize,
    pretrained: Option<&EmotionClassifier>,
    progress: &mut dyn FnMut(&EpochStats),
) -> Result<(EmotionClassifier, Vec<EpochStats>)> {
    if fold.train.is_empty() {
        return Err(Error::Empty(format!("training set of fold {}", fold.name)));
    }
    let fold_id = fold.index as u64;
    let mut model = if cfg.use_transfer_learning {
        let base = pretrained.ok_or_else(|| {
            Error::Config("transfer learning is enabled but no pretrained checkpoint was given".into())
        })?;
        let want = cfg.model_config(data.n_mels()?)?;
        let have = base.config();
        if have.blocks_per_stage != want.blocks_per_stage
            || have.base_channels != want.base_channels
            || have.stage_strides != want.stage_strides
            || have.n_mels != want.n_mels
        {
            return Err(Error::CheckpointMismatch(format!(
                "pretrained backbone {have:?} does not match configured model {want:?}"
            )));
        }
        let mut m = base.clone();
        m.replace_head_with(cfg.pooling, n_classes, &mut stream(cfg.seed, "init.head", &[fold_id]))?;
        if !cfg.fine_tune_backbone {
            m.freeze_backbone();
        }
        m
    } else {
        let model_cfg = cfg.model_config(data.n_mels()?)?;
        let mut m =
            EmotionClassifier::build(&model_cfg, cfg.pooling, n_classes, &mut stream(cfg.seed, "init", &[fold_id]))?;
        m.set_bn_config(cfg.batch_norm);
        m
    };
    let history = train_model(&mut model, data, &fold.train, cfg, fold_id, progress)?;
    Ok((model, history))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub truth: usize,
    pub predicted: usize,
    pub logits: Vec<f32>,
    /// The segment was shorter than the model minimum and was zero-padded.
    pub padded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub predictions: Vec<Prediction>,
    pub confusion: ConfusionMatrix,
}

/// Full-length, eval-mode classification of `indices`.
pub fn evaluate(
    model: &EmotionClassifier,
    records: &[SegmentRecord],
    data: Dataset<'_>,
    indices: &[usize],
    classes: &[String],
) -> Result<Evaluation> {
    if indices.is_empty() {
        return Err(Error::Empty("test set".into()));
    }
    let min = model.min_frames();
    let predictions = indices
        .par_iter()
        .map(|&i| {
            let spec = &data.specs[i];
            let padded = spec.n_frames() < min;
            let logits = if padded {
                model.forward(&chunk(spec, 0, min)?)?
            } else {
                model.forward(spec)?
            };
            Ok(Prediction {
                id: records[i].id.clone(),
                truth: data.labels[i],
                predicted: argmax(&logits),
                logits,
                padded,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut confusion = ConfusionMatrix::new(classes.to_vec());
    for p in &predictions {
        confusion.accumulate(p.truth, p.predicted)?;
    }
    Ok(Evaluation { predictions, confusion })
}
