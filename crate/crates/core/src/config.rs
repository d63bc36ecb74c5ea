//! Run configuration as flat `section.key = value` text.
//!
//! Every key has a default, unknown keys are rejected, and [`RunConfig::to_text`]
//! writes every key so a snapshot replays to the same run.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::dsp::FrontendConfig;
use crate::error::{Error, Result};
use crate::experiment::{ExperimentName, Protocol, TrainConfig};
use crate::model::Pooling;

/// Environment variable that overrides the configured root seed.
pub const SEED_ENV: &str = "EMOSER_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub experiment: ExperimentName,
    pub protocol: Protocol,
    /// k for k-fold cross-validation.
    pub folds: usize,
    /// Expected number of sessions under LOSO; 0 accepts any count >= 2.
    pub sessions: usize,
    pub frontend: FrontendConfig,
    pub train: TrainConfig,
    /// Pooling used by the ablation cells without statistics pooling.
    pub ablation_no_sp: Vec<Pooling>,
    pub manifest: Option<PathBuf>,
    pub run_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            experiment: ExperimentName::Custom,
            protocol: Protocol::Loso,
            folds: 5,
            sessions: 5,
            frontend: FrontendConfig::default(),
            train: TrainConfig::default(),
            ablation_no_sp: vec![Pooling::MeanOnly],
            manifest: None,
            run_dir: None,
            checkpoint: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn opt_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Sets one key. Values are validated as a whole by [`RunConfig::validate`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let fe = &mut self.frontend;
        let tr = &mut self.train;
        match key {
            "seed" => self.seed = parse(key, value)?,
            "experiment" => self.experiment = parse(key, value)?,
            "protocol" => self.protocol = parse(key, value)?,
            "folds" => self.folds = parse(key, value)?,
            "sessions" => self.sessions = parse(key, value)?,
            "frontend.window_ms" => fe.window_ms = parse(key, value)?,
            "frontend.hop_ms" => fe.hop_ms = parse(key, value)?,
            "frontend.n_mels" => fe.n_mels = parse(key, value)?,
            "frontend.fft_size" => fe.fft_size = parse(key, value)?,
            "frontend.f_min" => fe.f_min = parse(key, value)?,
            "frontend.f_max" => {
                fe.f_max = match value {
                    "" | "nyquist" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "frontend.log_floor" => fe.log_floor = parse(key, value)?,
            "frontend.norm_epsilon" => fe.norm_epsilon = parse(key, value)?,
            "augment.enabled" => tr.use_augmentation = parse_bool(key, value)?,
            "augment.policies" => tr.policies = parse_list(key, value)?,
            "model.preset" => tr.preset = value.to_string(),
            "model.hidden_width" => tr.hidden_width = parse(key, value)?,
            "model.pooling" => tr.pooling = parse(key, value)?,
            "model.bn_momentum" => tr.batch_norm.momentum = parse(key, value)?,
            "model.bn_eps" => tr.batch_norm.eps = parse(key, value)?,
            "train.batch_size" => tr.batch_size = parse(key, value)?,
            "train.chunk_lengths" => tr.chunk_lengths = parse_list(key, value)?,
            "train.epochs" => tr.epochs = parse(key, value)?,
            "train.momentum" => tr.momentum = parse(key, value)?,
            "train.lr" => tr.schedule.initial = parse(key, value)?,
            "train.lr_constant_epochs" => tr.schedule.constant_epochs = parse(key, value)?,
            "train.lr_halving_period" => tr.schedule.halving_period = parse(key, value)?,
            "train.transfer_learning" => tr.use_transfer_learning = parse_bool(key, value)?,
            "train.fine_tune_backbone" => tr.fine_tune_backbone = parse_bool(key, value)?,
            "ablation.no_sp" => self.ablation_no_sp = parse_list(key, value)?,
            "paths.manifest" => self.manifest = (!value.is_empty()).then(|| value.into()),
            "paths.run_dir" => self.run_dir = (!value.is_empty()).then(|| value.into()),
            "paths.checkpoint" => self.checkpoint = (!value.is_empty()).then(|| value.into()),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.train.model_config(self.frontend.n_mels)?;
        if self.protocol == Protocol::Kfold && self.folds < 2 {
            return Err(Error::Config(format!("k-fold needs at least 2 folds, got {}", self.folds)));
        }
        if self.ablation_no_sp.contains(&Pooling::Statistics) {
            return Err(Error::Config("ablation.no_sp must not contain statistics".into()));
        }
        Ok(())
    }

    /// Replaces the seed with `EMOSER_SEED` when it is set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = parse(SEED_ENV, v.trim())?;
        }
        Ok(())
    }

    /// Training settings with the root seed filled in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// Resolved configuration, one key per line.
    pub fn to_text(&self) -> String {
        let fe = &self.frontend;
        let tr = &self.train;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("experiment", self.experiment.to_string());
        kv("protocol", self.protocol.to_string());
        kv("folds", self.folds.to_string());
        kv("sessions", self.sessions.to_string());
        kv("frontend.window_ms", fe.window_ms.to_string());
        kv("frontend.hop_ms", fe.hop_ms.to_string());
        kv("frontend.n_mels", fe.n_mels.to_string());
        kv("frontend.fft_size", fe.fft_size.to_string());
        kv("frontend.f_min", fe.f_min.to_string());
        kv("frontend.f_max", fe.f_max.map_or("nyquist".into(), |f| f.to_string()));
        kv("frontend.log_floor", fe.log_floor.to_string());
        kv("frontend.norm_epsilon", fe.norm_epsilon.to_string());
        kv("augment.enabled", tr.use_augmentation.to_string());
        kv("augment.policies", join(&tr.policies.iter().map(|p| p.name).collect::<Vec<_>>()));
        kv("model.preset", tr.preset.clone());
        kv("model.hidden_width", tr.hidden_width.to_string());
        kv("model.pooling", tr.pooling.to_string());
        kv("model.bn_momentum", tr.batch_norm.momentum.to_string());
        kv("model.bn_eps", tr.batch_norm.eps.to_string());
        kv("train.batch_size", tr.batch_size.to_string());
        kv("train.chunk_lengths", join(&tr.chunk_lengths));
        kv("train.epochs", tr.epochs.to_string());
        kv("train.momentum", tr.momentum.to_string());
        kv("train.lr", tr.schedule.initial.to_string());
        kv("train.lr_constant_epochs", tr.schedule.constant_epochs.to_string());
        kv("train.lr_halving_period", tr.schedule.halving_period.to_string());
        kv("train.transfer_learning", tr.use_transfer_learning.to_string());
        kv("train.fine_tune_backbone", tr.fine_tune_backbone.to_string());
        kv("ablation.no_sp", join(&self.ablation_no_sp));
        kv("paths.manifest", opt_path(&self.manifest));
        kv("paths.run_dir", opt_path(&self.run_dir));
        kv("paths.checkpoint", opt_path(&self.checkpoint));
        s
    }
}
