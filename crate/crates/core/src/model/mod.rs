//! Residual-network emotion classifier.
//!
//! The spectrogram enters as a one-channel image (mel channels x frames).
//! A ResNet backbone works at the frame level; its output map is averaged
//! over the remaining frequency bins to a `C x T'` sequence, pooled over time
//! and classified by a two-layer FC head at the segment level.

mod checkpoint;

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, TrainingMeta, CHECKPOINT_VERSION};

use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{BatchNormConfig, BnMode, Conv2dSpec, PoolSpec, RunningStats, Tape, Tensor, Var};

/// Frame count the fixed-length (no statistics pooling) variant crops or
/// pads every input to.
pub const FIXED_FRAMES: usize = 300;

/// Variance floor inside the pooled standard deviation.
pub const STD_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Mean and standard deviation over frames.
    Statistics,
    /// Mean over frames only.
    MeanOnly,
    /// Inputs cropped/zero-padded to [`FIXED_FRAMES`], then mean over frames.
    NoneFixedLength,
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Statistics => "statistics",
            Pooling::MeanOnly => "mean_only",
            Pooling::NoneFixedLength => "none_fixed_length",
        })
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "statistics" => Ok(Pooling::Statistics),
            "mean_only" => Ok(Pooling::MeanOnly),
            "none_fixed_length" => Ok(Pooling::NoneFixedLength),
            other => Err(Error::Config(format!(
                "unknown pooling {other:?} (expected statistics, mean_only or none_fixed_length)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResNetConfig {
    pub preset: String,
    pub blocks_per_stage: [usize; 4],
    pub base_channels: usize,
    pub stage_strides: [usize; 4],
    pub hidden_width: usize,
    pub n_mels: usize,
}

impl ResNetConfig {
    /// ResNet34 layout, 32 channels in the first stage.
    pub fn paper() -> Self {
        Self {
            preset: "paper".into(),
            blocks_per_stage: [3, 4, 6, 3],
            base_channels: 32,
            stage_strides: [1, 2, 2, 2],
            hidden_width: 256,
            n_mels: 128,
        }
    }

    /// One block per stage, 8 channels in the first stage.
    pub fn lite() -> Self {
        Self {
            preset: "lite".into(),
            blocks_per_stage: [1, 1, 1, 1],
            base_channels: 8,
            ..Self::paper()
        }
    }

    pub fn from_preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "lite" => Ok(Self::lite()),
            other => Err(Error::Config(format!(
                "unknown model preset {other:?} (expected paper or lite)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks_per_stage.iter().any(|&b| b == 0)
            || self.base_channels == 0
            || self.stage_strides.iter().any(|&s| s == 0)
            || self.hidden_width == 0
            || self.n_mels == 0
        {
            return Err(Error::Config(format!("invalid model configuration {self:?}")));
        }
        Ok(())
    }

    pub fn stage_channels(&self, stage: usize) -> usize {
        self.base_channels << stage
    }

    pub fn final_channels(&self) -> usize {
        self.stage_channels(3)
    }

    /// Product of all time-axis strides (stem conv, stem max-pool, stages).
    pub fn min_frames(&self) -> usize {
        4 * self.stage_strides.iter().product::<usize>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    Backbone,
    Head,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnState {
    pub name: String,
    pub stats: RunningStats<f32>,
}

#[derive(Debug, Clone)]
struct ConvBn {
    weight: usize,
    gamma: usize,
    beta: usize,
    bn: usize,
    spec: Conv2dSpec,
}

#[derive(Debug, Clone)]
struct Block {
    conv1: ConvBn,
    act1: usize,
    conv2: ConvBn,
    shortcut: Option<ConvBn>,
    act_out: usize,
}

#[derive(Debug, Clone)]
struct Head {
    fc1_w: usize,
    fc1_b: usize,
    act: usize,
    fc2_w: usize,
    fc2_b: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    stem: ConvBn,
    stem_act: usize,
    blocks: Vec<Block>,
    head: Head,
}

/// Result of one forward pass on a tape.
pub struct Forward {
    pub logits: Var,
    /// Tape leaf for every parameter, aligned with [`EmotionClassifier::params`].
    pub param_vars: Vec<Var>,
    /// Pooled segment-level embedding (input of the head).
    pub pooled: Var,
}

#[derive(Debug, Clone)]
pub struct EmotionClassifier {
    config: ResNetConfig,
    pooling: Pooling,
    n_classes: usize,
    params: Vec<Param>,
    bn_states: Vec<BnState>,
    layout: Layout,
    frozen_backbone: bool,
    bn_config: BatchNormConfig,
}

/// Parameter initialization: conv weights N(0, 2/fan_in), linear weights
/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases, PReLU slopes 0.25,
/// BN gamma 1 / beta 0.
struct Builder<'a> {
    params: Vec<Param>,
    bn_states: Vec<BnState>,
    rng: &'a mut Rng,
    group: ParamGroup,
}

impl Builder<'_> {
    fn push(&mut self, name: String, value: Tensor<f32>) -> usize {
        self.params.push(Param {
            name,
            group: self.group,
            value,
        });
        self.params.len() - 1
    }

    fn conv_bn(&mut self, name: &str, c_in: usize, c_out: usize, k: usize, spec: Conv2dSpec) -> ConvBn {
        let fan_in = c_in * k * k;
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
        let w: Vec<f32> = (0..c_out * fan_in)
            .map(|_| normal.sample(&mut *self.rng) as f32)
            .collect();
        let weight = self.push(
            format!("{name}.conv.weight"),
            Tensor::new(vec![c_out, c_in, k, k], w).unwrap(),
        );
        let gamma = self.push(format!("{name}.bn.gamma"), Tensor::full(vec![c_out], 1.0));
        let beta = self.push(format!("{name}.bn.beta"), Tensor::zeros(vec![c_out]));
        self.bn_states.push(BnState {
            name: format!("{name}.bn"),
            stats: RunningStats::new(c_out),
        });
        ConvBn {
            weight,
            gamma,
            beta,
            bn: self.bn_states.len() - 1,
            spec,
        }
    }

    fn prelu(&mut self, name: &str, channels: usize) -> usize {
        self.push(format!("{name}.slope"), Tensor::full(vec![channels], 0.25))
    }

    fn linear(&mut self, name: &str, d_in: usize, d_out: usize) -> (usize, usize) {
        let bound = 1.0 / (d_in as f64).sqrt();
        let w: Vec<f32> = (0..d_out * d_in)
            .map(|_| self.rng.gen_range(-bound..bound) as f32)
            .collect();
        let wi = self.push(format!("{name}.weight"), Tensor::new(vec![d_out, d_in], w).unwrap());
        let bi = self.push(format!("{name}.bias"), Tensor::zeros(vec![d_out]));
        (wi, bi)
    }

    fn head(&mut self, d_in: usize, hidden: usize, n_classes: usize) -> Head {
        self.group = ParamGroup::Head;
        let (fc1_w, fc1_b) = self.linear("head.fc1", d_in, hidden);
        let act = self.prelu("head.prelu", hidden);
        let (fc2_w, fc2_b) = self.linear("head.fc2", hidden, n_classes);
        Head {
            fc1_w,
            fc1_b,
            act,
            fc2_w,
            fc2_b,
        }
    }
}

fn head_input_width(config: &ResNetConfig, pooling: Pooling) -> usize {
    match pooling {
        Pooling::Statistics => 2 * config.final_channels(),
        Pooling::MeanOnly | Pooling::NoneFixedLength => config.final_channels(),
    }
}

impl EmotionClassifier {
    pub fn build(config: &ResNetConfig, pooling: Pooling, n_classes: usize, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        if n_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {n_classes}")));
        }
        let mut b = Builder {
            params: Vec::new(),
            bn_states: Vec::new(),
            rng,
            group: ParamGroup::Backbone,
        };
        let c0 = config.base_channels;
        let stem = b.conv_bn("stem", 1, c0, 7, Conv2dSpec::new(2, 3));
        let stem_act = b.prelu("stem.prelu", c0);
        let mut blocks = Vec::new();
        let mut c_in = c0;
        for stage in 0..4 {
            let c_out = config.stage_channels(stage);
            for idx in 0..config.blocks_per_stage[stage] {
                let stride = if idx == 0 { config.stage_strides[stage] } else { 1 };
                let name = format!("stage{}.block{idx}", stage + 1);
                let conv1 = b.conv_bn(&format!("{name}.conv1"), c_in, c_out, 3, Conv2dSpec::new(stride, 1));
                let act1 = b.prelu(&format!("{name}.prelu1"), c_out);
                let conv2 = b.conv_bn(&format!("{name}.conv2"), c_out, c_out, 3, Conv2dSpec::new(1, 1));
                let shortcut = (stride != 1 || c_in != c_out)
                    .then(|| b.conv_bn(&format!("{name}.shortcut"), c_in, c_out, 1, Conv2dSpec::new(stride, 0)));
                let act_out = b.prelu(&format!("{name}.prelu_out"), c_out);
                blocks.push(Block {
                    conv1,
                    act1,
                    conv2,
                    shortcut,
                    act_out,
                });
                c_in = c_out;
            }
        }
        let head = b.head(head_input_width(config, pooling), config.hidden_width, n_classes);
        let Builder { params, bn_states, .. } = b;
        Ok(Self {
            config: config.clone(),
            pooling,
            n_classes,
            params,
            bn_states,
            layout: Layout {
                stem,
                stem_act,
                blocks,
                head,
            },
            frozen_backbone: false,
            bn_config: BatchNormConfig::default(),
        })
    }

    pub fn config(&self) -> &ResNetConfig {
        &self.config
    }

    pub fn pooling(&self) -> Pooling {
        self.pooling
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn bn_states(&self) -> &[BnState] {
        &self.bn_states
    }

    pub fn bn_config(&self) -> BatchNormConfig {
        self.bn_config
    }

    pub fn set_bn_config(&mut self, bn_config: BatchNormConfig) {
        self.bn_config = bn_config;
    }

    pub fn is_backbone_frozen(&self) -> bool {
        self.frozen_backbone
    }

    pub fn head_input_width(&self) -> usize {
        head_input_width(&self.config, self.pooling)
    }

    pub fn min_frames(&self) -> usize {
        match self.pooling {
            Pooling::NoneFixedLength => 1,
            _ => self.config.min_frames(),
        }
    }

    pub fn n_backbone_params(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.group == ParamGroup::Backbone)
            .count()
    }

    /// Whether the optimizer should update this parameter.
    pub fn is_trainable(&self, index: usize) -> bool {
        !(self.frozen_backbone && self.params[index].group == ParamGroup::Backbone)
    }

    pub fn freeze_backbone(&mut self) {
        self.frozen_backbone = true;
    }

    pub fn unfreeze_backbone(&mut self) {
        self.frozen_backbone = false;
    }

    /// Discards the FC head and draws a new one for `n_classes` outputs.
    /// Backbone parameters and running statistics are left untouched.
    pub fn replace_head(&mut self, n_classes: usize, rng: &mut Rng) -> Result<()> {
        self.replace_head_with(self.pooling, n_classes, rng)
    }

    /// Like [`replace_head`](Self::replace_head), also switching the pooling
    /// (and therefore the head input width).
    pub fn replace_head_with(&mut self, pooling: Pooling, n_classes: usize, rng: &mut Rng) -> Result<()> {
        if n_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {n_classes}")));
        }
        let keep = self.n_backbone_params();
        self.params.truncate(keep);
        let mut b = Builder {
            params: std::mem::take(&mut self.params),
            bn_states: Vec::new(),
            rng,
            group: ParamGroup::Head,
        };
        self.layout.head = b.head(head_input_width(&self.config, pooling), self.config.hidden_width, n_classes);
        self.params = b.params;
        self.pooling = pooling;
        self.n_classes = n_classes;
        Ok(())
    }

    /// Batch tensor `N x 1 x n_mels x T` from equally long spectrograms.
    pub fn batch_input(specs: &[&MelSpectrogram]) -> Result<Tensor<f32>> {
        let first = specs.first().ok_or_else(|| Error::Empty("batch".into()))?;
        let (t_len, n_mels) = (first.n_frames(), first.n_mels());
        let mut data = vec![0.0f32; specs.len() * n_mels * t_len];
        for (n, spec) in specs.iter().enumerate() {
            if spec.n_frames() != t_len || spec.n_mels() != n_mels {
                return Err(Error::Shape("batch members differ in size".into()));
            }
            let plane = &mut data[n * n_mels * t_len..(n + 1) * n_mels * t_len];
            for t in 0..t_len {
                for (m, &v) in spec.frame(t).iter().enumerate() {
                    plane[m * t_len + t] = v;
                }
            }
        }
        Tensor::new(vec![specs.len(), 1, n_mels, t_len], data)
    }

    fn fit_input(&self, input: Tensor<f32>) -> Result<Tensor<f32>> {
        let s = input.shape().to_vec();
        if s.len() != 4 || s[1] != 1 || s[2] != self.config.n_mels {
            return Err(Error::Shape(format!(
                "model expects N x 1 x {} x T input, got {s:?}",
                self.config.n_mels
            )));
        }
        if s[3] < self.min_frames() {
            return Err(Error::InputTooShort {
                frames: s[3],
                minimum: self.min_frames(),
            });
        }
        if self.pooling != Pooling::NoneFixedLength || s[3] == FIXED_FRAMES {
            return Ok(input);
        }
        let (rows, t_in) = (s[0] * s[2], s[3]);
        let keep = t_in.min(FIXED_FRAMES);
        let mut data = vec![0.0f32; rows * FIXED_FRAMES];
        for (dst, src) in data.chunks_exact_mut(FIXED_FRAMES).zip(input.data().chunks_exact(t_in)) {
            dst[..keep].copy_from_slice(&src[..keep]);
        }
        Tensor::new(vec![s[0], 1, s[2], FIXED_FRAMES], data)
    }

    fn conv_bn(
        &self,
        tape: &mut Tape<f32>,
        vars: &[Var],
        x: Var,
        layer: &ConvBn,
        bn_mode: BnMode,
        stats: &mut [RunningStats<f32>],
    ) -> Result<Var> {
        let y = tape.conv2d(x, vars[layer.weight], layer.spec)?;
        tape.batch_norm(
            y,
            vars[layer.gamma],
            vars[layer.beta],
            &mut stats[layer.bn],
            bn_mode,
            self.bn_config,
        )
    }

    /// Records a forward pass and returns the logits plus the running
    /// statistics a train-mode pass produced (unchanged copies in eval mode).
    fn forward_impl(
        &self,
        tape: &mut Tape<f32>,
        input: Tensor<f32>,
        mode: Mode,
    ) -> Result<(Forward, Vec<RunningStats<f32>>)> {
        let input = self.fit_input(input)?;
        let backbone_trains = mode == Mode::Train && !self.frozen_backbone;
        let bn_mode = if backbone_trains { BnMode::Train } else { BnMode::Eval };
        let param_vars: Vec<Var> = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| tape.leaf(p.value.clone(), mode == Mode::Train && self.is_trainable(i)))
            .collect();
        let mut stats: Vec<RunningStats<f32>> = self.bn_states.iter().map(|b| b.stats.clone()).collect();
        let v = &param_vars;
        let l = &self.layout;

        let x = tape.leaf(input, false);
        let x = self.conv_bn(tape, v, x, &l.stem, bn_mode, &mut stats)?;
        let x = tape.prelu(x, v[l.stem_act])?;
        let mut x = tape.max_pool2d(
            x,
            PoolSpec {
                kernel: 3,
                stride: 2,
                padding: 1,
            },
        )?;
        for block in &l.blocks {
            let h = self.conv_bn(tape, v, x, &block.conv1, bn_mode, &mut stats)?;
            let h = tape.prelu(h, v[block.act1])?;
            let h = self.conv_bn(tape, v, h, &block.conv2, bn_mode, &mut stats)?;
            let skip = match &block.shortcut {
                Some(sc) => self.conv_bn(tape, v, x, sc, bn_mode, &mut stats)?,
                None => x,
            };
            let sum = tape.add(h, skip)?;
            x = tape.prelu(sum, v[block.act_out])?;
        }
        let frames = tape.mean_freq(x)?;
        let pooled = match self.pooling {
            Pooling::Statistics => tape.stats_pool(frames, STD_EPS)?,
            Pooling::MeanOnly | Pooling::NoneFixedLength => tape.mean_time(frames)?,
        };
        let h = tape.linear(pooled, v[l.head.fc1_w], v[l.head.fc1_b])?;
        let h = tape.prelu(h, v[l.head.act])?;
        let logits = tape.linear(h, v[l.head.fc2_w], v[l.head.fc2_b])?;
        Ok((
            Forward {
                logits,
                param_vars,
                pooled,
            },
            stats,
        ))
    }

    /// Training-mode forward pass. Unless the backbone is frozen, batch-norm
    /// layers use batch statistics and update their running averages.
    pub fn forward_train(&mut self, tape: &mut Tape<f32>, input: Tensor<f32>) -> Result<Forward> {
        let (fwd, stats) = self.forward_impl(tape, input, Mode::Train)?;
        if !self.frozen_backbone {
            for (state, new) in self.bn_states.iter_mut().zip(stats) {
                state.stats = new;
            }
        }
        Ok(fwd)
    }

    /// Eval-mode forward pass on a caller-provided tape.
    pub fn forward_eval(&self, tape: &mut Tape<f32>, input: Tensor<f32>) -> Result<Forward> {
        Ok(self.forward_impl(tape, input, Mode::Eval)?.0)
    }

    /// Logits for one normalized spectrogram of any supported length.
    pub fn forward(&self, spec: &MelSpectrogram) -> Result<Vec<f32>> {
        if !spec.is_normalized() {
            return Err(Error::NotNormalized("classification"));
        }
        let mut tape = Tape::new();
        let fwd = self.forward_eval(&mut tape, Self::batch_input(&[spec])?)?;
        let logits = tape.value(fwd.logits).data().to_vec();
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model forward".into()));
        }
        Ok(logits)
    }

    /// Pooled embedding (head input) for one spectrogram, eval mode.
    pub fn embed(&self, spec: &MelSpectrogram) -> Result<Vec<f32>> {
        let mut tape = Tape::new();
        let fwd = self.forward_eval(&mut tape, Self::batch_input(&[spec])?)?;
        Ok(tape.value(fwd.pooled).data().to_vec())
    }

    pub(crate) fn from_parts(
        config: ResNetConfig,
        pooling: Pooling,
        n_classes: usize,
        params: Vec<Param>,
        bn_states: Vec<BnState>,
        bn_config: BatchNormConfig,
    ) -> Result<Self> {
        let mut rng = crate::rng::stream(0, "layout", &[]);
        let mut shell = Self::build(&config, pooling, n_classes, &mut rng)?;
        if shell.params.len() != params.len() || shell.bn_states.len() != bn_states.len() {
            return Err(Error::CheckpointMismatch(format!(
                "expected {} parameters and {} batch-norm layers, found {} and {}",
                shell.params.len(),
                shell.bn_states.len(),
                params.len(),
                bn_states.len()
            )));
        }
        for (want, got) in shell.params.iter().zip(&params) {
            if want.name != got.name || want.value.shape() != got.value.shape() {
                return Err(Error::CheckpointMismatch(format!(
                    "parameter {} {:?} vs stored {} {:?}",
                    want.name,
                    want.value.shape(),
                    got.name,
                    got.value.shape()
                )));
            }
        }
        for (want, got) in shell.bn_states.iter().zip(&bn_states) {
            if want.name != got.name || want.stats.mean.len() != got.stats.mean.len() {
                return Err(Error::CheckpointMismatch(format!(
                    "batch-norm layer {} vs stored {}",
                    want.name, got.name
                )));
            }
        }
        shell.params = params;
        shell.bn_states = bn_states;
        shell.bn_config = bn_config;
        Ok(shell)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn spec(n_frames: usize, seed: u64) -> MelSpectrogram {
        let mut rng = stream(seed, "spec", &[]);
        let data = (0..n_frames * 128).map(|_| rng.gen_range(-2.0f32..2.0)).collect();
        MelSpectrogram::from_frames(data, 128, true).unwrap()
    }

    #[test]
    fn head_widths_follow_channel_plan() {
        let mut rng = stream(1, "init", &[]);
        let paper = EmotionClassifier::build(&ResNetConfig::paper(), Pooling::Statistics, 4, &mut rng).unwrap();
        assert_eq!(paper.head_input_width(), 512);
        let lite = EmotionClassifier::build(&ResNetConfig::lite(), Pooling::Statistics, 4, &mut rng).unwrap();
        assert_eq!(lite.head_input_width(), 128);
        let mean = EmotionClassifier::build(&ResNetConfig::lite(), Pooling::MeanOnly, 4, &mut rng).unwrap();
        assert_eq!(mean.head_input_width(), 64);
        assert_eq!(ResNetConfig::lite().min_frames(), 32);
    }

    #[test]
    fn build_is_deterministic() {
        let a = EmotionClassifier::build(&ResNetConfig::lite(), Pooling::Statistics, 4, &mut stream(3, "init", &[])).unwrap();
        let b = EmotionClassifier::build(&ResNetConfig::lite(), Pooling::Statistics, 4, &mut stream(3, "init", &[])).unwrap();
        assert_eq!(a.params, b.params);
        let c = EmotionClassifier::build(&ResNetConfig::lite(), Pooling::Statistics, 4, &mut stream(4, "init", &[])).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn rejects_bad_class_count() {
        assert!(EmotionClassifier::build(&ResNetConfig::lite(), Pooling::Statistics, 1, &mut stream(0, "i", &[])).is_err());
    }

    #[test]
    fn variable_length_inputs_give_k_logits() {
        let model = EmotionClassifier::build(&ResNetConfig::lite(), Pooling::Statistics, 4, &mut stream(5, "init", &[])).unwrap();
        for t in [32, 150, 298] {
            let logits = model.forward(&spec(t, t as u64)).unwrap();
            assert_eq!(logits.len(), 4);
            assert!(logits.iter().all(|v| v.is_finite()));
        }
        let zeros = MelSpectrogram::from_frames(vec![0.0; 100 * 128], 128, true).unwrap();
        assert!(model.forward(&zeros).unwrap().iter().all(|v| v.is_finite()));
        assert!(matches!(
            model.forward(&spec(31, 0)),
            Err(Error::InputTooShort { frames: 31, minimum: 32 })
        ));
    }

    #[test]
    fn replace_head_keeps_backbone() {
        let mut rng = stream(6, "init", &[]);
        let mut model = EmotionClassifier::build(&ResNetConfig::lite(), Pooling::Statistics, 20, &mut rng).unwrap();
        let backbone: Vec<Param> = model.params[..model.n_backbone_params()].to_vec();
        let bn = model.bn_states.clone();
        model.replace_head(4, &mut stream(9, "head", &[])).unwrap();
        assert_eq!(&model.params[..model.n_backbone_params()], &backbone[..]);
        assert_eq!(model.bn_states, bn);
        assert_eq!(model.forward(&spec(64, 1)).unwrap().len(), 4);

        let mut again = model.clone();
        model.replace_head(4, &mut stream(9, "head", &[])).unwrap();
        again.replace_head(4, &mut stream(9, "head", &[])).unwrap();
        assert_eq!(model.params, again.params);
        model.replace_head(20, &mut stream(1, "head", &[])).unwrap();
        assert_eq!(model.forward(&spec(64, 1)).unwrap().len(), 20);
    }

    #[test]
    fn eval_forward_is_repeatable() {
        let model = EmotionClassifier::build(&ResNetConfig::lite(), Pooling::Statistics, 4, &mut stream(7, "init", &[])).unwrap();
        let s = spec(120, 3);
        let first = model.forward(&s).unwrap();
        for _ in 0..100 {
            assert_eq!(model.forward(&s).unwrap(), first);
        }
    }

    #[test]
    fn fixed_length_variant_accepts_short_and_long_inputs() {
        let model = EmotionClassifier::build(&ResNetConfig::lite(), Pooling::NoneFixedLength, 3, &mut stream(8, "init", &[])).unwrap();
        assert_eq!(model.forward(&spec(10, 1)).unwrap().len(), 3);
        assert_eq!(model.forward(&spec(500, 1)).unwrap().len(), 3);
        // Frames past the fixed length are ignored.
        let long = spec(400, 2);
        let cropped = MelSpectrogram::from_frames(long.frames()[..300 * 128].to_vec(), 128, true).unwrap();
        assert_eq!(model.forward(&long).unwrap(), model.forward(&cropped).unwrap());
    }
}
