//! Cross-validation driver and run-directory artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::manifest::SegmentRecord;
use crate::experiment::split::Fold;
use crate::experiment::train::{evaluate, train_emotion, Dataset, EpochStats, Prediction, TrainConfig};
use crate::metrics::{MetricsFile, MetricsReport};
use crate::model::{save_checkpoint, EmotionClassifier, TrainingMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Loso,
    Kfold,
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Protocol::Loso => "loso",
            Protocol::Kfold => "kfold",
        })
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loso" => Ok(Protocol::Loso),
            "kfold" => Ok(Protocol::Kfold),
            other => Err(Error::Config(format!("unknown protocol {other:?} (expected loso or kfold)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: Fold,
    pub model: EmotionClassifier,
    pub history: Vec<EpochStats>,
    pub predictions: Vec<Prediction>,
    pub report: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub folds: Vec<FoldOutcome>,
    pub metrics: MetricsFile,
}

/// Progress events emitted while a cross-validation runs.
#[derive(Debug, Clone)]
pub enum Progress<'a> {
    Epoch { fold: &'a str, stats: &'a EpochStats },
    Fold { fold: &'a str, report: &'a MetricsReport },
}

/// Trains and evaluates every fold in order.
#[allow(clippy::too_many_arguments)]
pub fn cross_validate(
    experiment: &str,
    records: &[SegmentRecord],
    data: Dataset<'_>,
    classes: &[String],
    folds: &[Fold],
    cfg: &TrainConfig,
    pretrained: Option<&EmotionClassifier>,
    progress: &mut dyn FnMut(Progress<'_>),
) -> Result<CvOutcome> {
    let mut outcomes = Vec::with_capacity(folds.len());
    for fold in folds {
        let (model, history) = train_emotion(cfg, data, fold, classes.len(), pretrained, &mut |stats| {
            progress(Progress::Epoch { fold: &fold.name, stats })
        })?;
        let eval = evaluate(&model, records, data, &fold.test, classes)?;
        let mut report = MetricsReport::from_confusion(fold.index, eval.confusion)?;
        report.padded_segments = eval
            .predictions
            .iter()
            .filter(|p| p.padded)
            .map(|p| p.id.clone())
            .collect();
        progress(Progress::Fold { fold: &fold.name, report: &report });
        outcomes.push(FoldOutcome {
            fold: fold.clone(),
            model,
            history,
            predictions: eval.predictions,
            report,
        });
    }
    let metrics = MetricsFile::new(experiment, outcomes.iter().map(|o| o.report.clone()).collect())?;
    Ok(CvOutcome { folds: outcomes, metrics })
}

/// `id,true,pred,logit_<class>...`.
pub fn predictions_csv(predictions: &[Prediction], classes: &[String]) -> String {
    let mut s = String::from("id,true,pred");
    for c in classes {
        let _ = write!(s, ",logit_{c}");
    }
    s.push('\n');
    for p in predictions {
        let _ = write!(s, "{},{},{}", p.id, classes[p.truth], classes[p.predicted]);
        for v in &p.logits {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

pub fn history_csv(history: &[EpochStats]) -> String {
    let mut s = String::from("epoch,lr,loss,train_wa\n");
    for h in history {
        let _ = writeln!(s, "{},{},{},{}", h.epoch, h.lr, h.loss, h.train_wa);
    }
    s
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `fold<i>/{model.ckpt,predictions.csv,history.csv}`, the pooled
/// confusion CSV and `metrics.json` under `dir`.
pub fn write_cv_artifacts(dir: &Path, outcome: &CvOutcome, classes: &[String], meta: &TrainingMeta) -> Result<()> {
    for f in &outcome.folds {
        let fold_dir = dir.join(format!("fold{}", f.fold.index + 1));
        fs::create_dir_all(&fold_dir).map_err(|e| Error::io(&fold_dir, e))?;
        save_checkpoint(&fold_dir.join("model.ckpt"), &f.model, meta)?;
        write_file(&fold_dir.join("predictions.csv"), predictions_csv(&f.predictions, classes))?;
        write_file(&fold_dir.join("history.csv"), history_csv(&f.history))?;
        write_file(&fold_dir.join("confusion.csv"), f.report.confusion.to_csv())?;
    }
    write_file(&dir.join("confusion_pooled.csv"), outcome.metrics.summary.pooled_confusion.to_csv())?;
    write_file(&dir.join("metrics.json"), outcome.metrics.to_json())
}
