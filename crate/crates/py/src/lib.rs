//! Python bindings: front-end, masking, the classifier and cross-validation.

use std::path::PathBuf;

use emoser_core::config::RunConfig;
use emoser_core::dsp::dump::{read_dump, write_dump, DumpFormat};
use emoser_core::dsp::{self, AudioSegment, FrontendConfig, MelSpectrogram};
use emoser_core::experiment::{
    cross_validate, extract_features, generate_synthetic_dataset, kfold_splits, load_manifest, loso_splits, Dataset,
    ExperimentDef, Protocol, SyntheticSpec,
};
use emoser_core::metrics::ConfusionMatrix;
use emoser_core::model::{load_checkpoint, save_checkpoint, EmotionClassifier, Pooling, ResNetConfig, TrainingMeta};
use emoser_core::rng::stream;
use emoser_core::specaug::{apply_masks, AugmentationPolicy, MaskAxis};
use emoser_core::Error;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyOSError};
use pyo3::prelude::*;

create_exception!(emoser, EmoserError, PyException);
create_exception!(emoser, ConfigError, EmoserError);
create_exception!(emoser, NonFiniteError, EmoserError);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(_) => ConfigError::new_err(e.to_string()),
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::NonFinite(_) => NonFiniteError::new_err(e.to_string()),
        _ => EmoserError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for emoser_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

/// A log-mel spectrogram, `n_frames x n_mels`.
#[pyclass(name = "MelSpectrogram", module = "emoser", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyMel {
    inner: MelSpectrogram,
}

#[pymethods]
impl PyMel {
    #[new]
    #[pyo3(signature = (frames, normalized = false))]
    fn new(frames: Vec<Vec<f32>>, normalized: bool) -> PyResult<Self> {
        let n_mels = frames.first().map_or(0, Vec::len);
        if frames.iter().any(|f| f.len() != n_mels) {
            return Err(EmoserError::new_err("ragged frames"));
        }
        let flat = frames.into_iter().flatten().collect();
        Ok(Self {
            inner: MelSpectrogram::from_frames(flat, n_mels, normalized).py()?,
        })
    }

    #[getter]
    fn n_frames(&self) -> usize {
        self.inner.n_frames()
    }

    #[getter]
    fn n_mels(&self) -> usize {
        self.inner.n_mels()
    }

    #[getter]
    fn normalized(&self) -> bool {
        self.inner.is_normalized()
    }

    /// Frames as a list of rows.
    fn to_list(&self) -> Vec<Vec<f32>> {
        self.inner.frames().chunks(self.inner.n_mels()).map(<[f32]>::to_vec).collect()
    }

    /// Per-segment mean/variance normalisation.
    #[pyo3(signature = (epsilon = 1e-5))]
    fn normalize(&self, epsilon: f64) -> PyResult<Self> {
        Ok(Self {
            inner: dsp::normalize_segment(&self.inner, epsilon).py()?,
        })
    }

    #[pyo3(signature = (path, binary = true))]
    fn save(&self, path: PathBuf, binary: bool) -> PyResult<()> {
        let format = if binary { DumpFormat::Binary } else { DumpFormat::Text };
        write_dump(path, &self.inner, format).py()
    }

    #[staticmethod]
    #[pyo3(signature = (path, normalized = false))]
    fn load(path: PathBuf, normalized: bool) -> PyResult<Self> {
        Ok(Self {
            inner: read_dump(path, normalized).py()?,
        })
    }

    fn __repr__(&self) -> String {
        format!("MelSpectrogram(n_frames={}, n_mels={})", self.inner.n_frames(), self.inner.n_mels())
    }
}

/// Reads a mono PCM WAV file; returns `(samples, sample_rate)`.
#[pyfunction]
fn load_wav(path: PathBuf) -> PyResult<(Vec<f32>, u32)> {
    let audio = dsp::load_wav(path).py()?;
    Ok((audio.samples.clone(), audio.sample_rate))
}

/// Log-mel features of a waveform, optionally normalised per segment.
#[pyfunction]
#[pyo3(signature = (samples, sample_rate, n_mels = 128, window_ms = 25, hop_ms = 10, normalize = false))]
fn log_mel(
    samples: Vec<f32>,
    sample_rate: u32,
    n_mels: usize,
    window_ms: u32,
    hop_ms: u32,
    normalize: bool,
) -> PyResult<PyMel> {
    let cfg = FrontendConfig {
        n_mels,
        window_ms,
        hop_ms,
        ..FrontendConfig::default()
    };
    let audio = AudioSegment::new("python", samples, sample_rate).py()?;
    let mut spec = dsp::log_mel(&audio, &cfg).py()?;
    if normalize {
        spec = dsp::normalize_segment(&spec, cfg.norm_epsilon).py()?;
    }
    Ok(PyMel { inner: spec })
}

/// Masks a normalised spectrogram with a named policy (`none`,
/// `conservative`, `aggressive`). Returns the masked copy and the masks as
/// `(axis, start, width)` tuples.
#[pyfunction]
#[pyo3(signature = (spec, policy, seed = 0))]
fn augment(spec: &PyMel, policy: &str, seed: u64) -> PyResult<(PyMel, Vec<(String, usize, usize)>)> {
    let policy: AugmentationPolicy = policy.parse().py()?;
    let (out, masks) = apply_masks(&spec.inner, &policy, &mut stream(seed, "augment", &[])).py()?;
    let masks = masks
        .into_iter()
        .map(|m| {
            let axis = match m.axis {
                MaskAxis::Frequency => "frequency",
                MaskAxis::Time => "time",
            };
            (axis.to_string(), m.start, m.width)
        })
        .collect();
    Ok((PyMel { inner: out }, masks))
}

/// `(weighted, unweighted)` accuracy of a square confusion count matrix.
#[pyfunction]
fn accuracies(counts: Vec<Vec<u64>>) -> PyResult<(f64, f64)> {
    let classes = (0..counts.len()).map(|i| format!("c{i}")).collect();
    let cm = ConfusionMatrix::from_counts(classes, counts).py()?;
    Ok((cm.weighted_accuracy().py()?, cm.unweighted_accuracy().py()?))
}

/// The residual classifier.
#[pyclass(name = "Classifier", module = "emoser")]
struct PyClassifier {
    inner: EmotionClassifier,
    meta: TrainingMeta,
}

#[pymethods]
impl PyClassifier {
    #[new]
    #[pyo3(signature = (n_classes, preset = "lite", pooling = "statistics", n_mels = 128, seed = 0))]
    fn new(n_classes: usize, preset: &str, pooling: &str, n_mels: usize, seed: u64) -> PyResult<Self> {
        let mut config = ResNetConfig::from_preset(preset).py()?;
        config.n_mels = n_mels;
        let pooling: Pooling = pooling.parse().py()?;
        let inner = EmotionClassifier::build(&config, pooling, n_classes, &mut stream(seed, "init", &[])).py()?;
        Ok(Self {
            inner,
            meta: TrainingMeta::default(),
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (inner, meta) = load_checkpoint(&path, None).py()?;
        Ok(Self { inner, meta })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&path, &self.inner, &self.meta).py()
    }

    #[getter]
    fn n_classes(&self) -> usize {
        self.inner.n_classes()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.meta.labels.clone()
    }

    #[getter]
    fn min_frames(&self) -> usize {
        self.inner.min_frames()
    }

    /// Logits for one normalised spectrogram.
    fn forward(&self, spec: &PyMel) -> PyResult<Vec<f32>> {
        self.inner.forward(&spec.inner).py()
    }

    /// Pooled utterance embedding.
    fn embed(&self, spec: &PyMel) -> PyResult<Vec<f32>> {
        self.inner.embed(&spec.inner).py()
    }

    fn __repr__(&self) -> String {
        format!(
            "Classifier(preset={}, pooling={}, n_classes={})",
            self.inner.config().preset,
            self.inner.pooling(),
            self.inner.n_classes()
        )
    }
}

/// Writes a synthetic corpus from a JSON spec (`"{}"` for the defaults) and
/// returns the manifest path.
#[pyfunction]
#[pyo3(signature = (out_dir, spec_json = "{}"))]
fn synthesize(out_dir: PathBuf, spec_json: &str) -> PyResult<PathBuf> {
    let spec: SyntheticSpec =
        serde_json::from_str(spec_json).map_err(|e| ConfigError::new_err(format!("synthetic spec: {e}")))?;
    generate_synthetic_dataset(&spec, &out_dir).py()?;
    Ok(out_dir.join("manifest.csv"))
}

/// Cross-validates on a manifest with a `key = value` config text and
/// returns the metrics JSON.
#[pyfunction]
#[pyo3(signature = (manifest, config = ""))]
fn train(py: Python<'_>, manifest: PathBuf, config: &str) -> PyResult<String> {
    let cfg = RunConfig::from_text(config).py()?;
    py.detach(|| {
        let records = load_manifest(&manifest)?;
        let specs = extract_features(&records, &cfg.frontend, 0)?;
        let def = ExperimentDef::by_name(cfg.experiment, &records);
        let labels = def.labels(&records)?;
        let folds = match cfg.protocol {
            Protocol::Loso => loso_splits(&records, (cfg.sessions > 0).then_some(cfg.sessions))?,
            Protocol::Kfold => kfold_splits(&labels, cfg.folds, &mut stream(cfg.seed, "kfold", &[]))?,
        };
        let data = Dataset {
            specs: &specs,
            labels: &labels,
        };
        let name = cfg.experiment.to_string();
        let outcome =
            cross_validate(&name, &records, data, &def.classes, &folds, &cfg.train_config(), None, &mut |_| {})?;
        Ok(outcome.metrics.to_json())
    })
    .py()
}

#[pymodule]
pub fn emoser(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("EmoserError", m.py().get_type::<EmoserError>())?;
    m.add("ConfigError", m.py().get_type::<ConfigError>())?;
    m.add("NonFiniteError", m.py().get_type::<NonFiniteError>())?;
    m.add_class::<PyMel>()?;
    m.add_class::<PyClassifier>()?;
    m.add_function(wrap_pyfunction!(load_wav, m)?)?;
    m.add_function(wrap_pyfunction!(log_mel, m)?)?;
    m.add_function(wrap_pyfunction!(augment, m)?)?;
    m.add_function(wrap_pyfunction!(accuracies, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
