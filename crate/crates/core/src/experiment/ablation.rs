//! Transfer learning x augmentation x statistics pooling grid.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::manifest::SegmentRecord;
use crate::experiment::run::{cross_validate, Progress};
use crate::experiment::split::Fold;
use crate::experiment::train::{Dataset, TrainConfig};
use crate::metrics::mean_std;
use crate::model::{EmotionClassifier, Pooling};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub transfer_learning: bool,
    pub augmentation: bool,
    /// Statistics pooling on; otherwise `pooling` names the substitute.
    pub statistics_pooling: bool,
    pub pooling: Pooling,
    pub fold_wa: Vec<f64>,
    pub fold_ua: Vec<f64>,
    pub wa_mean: f64,
    pub wa_std: f64,
    pub ua_mean: f64,
    pub ua_std: f64,
}

impl AblationCell {
    pub fn label(&self) -> String {
        let flag = |on: bool, name: &str| if on { name.to_string() } else { format!("-{name}") };
        let mut s = format!(
            "{} {} {}",
            flag(self.transfer_learning, "TL"),
            flag(self.augmentation, "Aug"),
            flag(self.statistics_pooling, "SP")
        );
        if !self.statistics_pooling {
            let _ = write!(s, " ({})", self.pooling);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub n_folds: usize,
    pub cells: Vec<AblationCell>,
}

impl AblationReport {
    pub fn cell(&self, tl: bool, aug: bool, pooling: Pooling) -> Option<&AblationCell> {
        self.cells
            .iter()
            .find(|c| c.transfer_learning == tl && c.augmentation == aug && c.pooling == pooling)
    }

    /// Aligned text table, one row per cell, mean ± std in percent.
    pub fn render(&self) -> String {
        let mut s = format!(
            "{:<36} {:>16} {:>16}\n",
            "cell",
            "WA [%]",
            "UA [%]"
        );
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{:<36} {:>8.2} ± {:>5.2} {:>8.2} ± {:>5.2}",
                c.label(),
                100.0 * c.wa_mean,
                100.0 * c.wa_std,
                100.0 * c.ua_mean,
                100.0 * c.ua_std
            );
        }
        s
    }
}

/// Runs every combination of transfer learning, augmentation and pooling
/// over the same folds. `no_sp` lists the pooling substitutes used for the
/// cells without statistics pooling (one set of cells per substitute).
/// `parallel_cells > 1` trains that many cells concurrently.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation(
    records: &[SegmentRecord],
    data: Dataset<'_>,
    classes: &[String],
    folds: &[Fold],
    base: &TrainConfig,
    pretrained: &EmotionClassifier,
    no_sp: &[Pooling],
    parallel_cells: usize,
    log: &(dyn Fn(&str) + Sync),
) -> Result<AblationReport> {
    if folds.is_empty() {
        return Err(Error::Empty("fold list".into()));
    }
    if no_sp.contains(&Pooling::Statistics) {
        return Err(Error::Config("statistics pooling cannot substitute for itself".into()));
    }
    let mut grid = Vec::new();
    for tl in [false, true] {
        for aug in [false, true] {
            for &pooling in std::iter::once(&Pooling::Statistics).chain(no_sp) {
                grid.push((tl, aug, pooling));
            }
        }
    }
    let run_cell = |&(tl, aug, pooling): &(bool, bool, Pooling)| -> Result<AblationCell> {
        let cfg = TrainConfig {
            use_transfer_learning: tl,
            use_augmentation: aug,
            pooling,
            ..base.clone()
        };
        let outcome = cross_validate("ablation", records, data, classes, folds, &cfg, Some(pretrained), &mut |p| {
            if let Progress::Fold { fold, report } = p {
                log(&format!(
                    "TL={tl} Aug={aug} pooling={pooling} {fold}: WA {:.2}%",
                    100.0 * report.wa
                ));
            }
        })?;
        let fold_wa: Vec<f64> = outcome.metrics.folds.iter().map(|r| r.wa).collect();
        let fold_ua: Vec<f64> = outcome.metrics.folds.iter().map(|r| r.ua).collect();
        let (wa_mean, wa_std) = mean_std(&fold_wa);
        let (ua_mean, ua_std) = mean_std(&fold_ua);
        Ok(AblationCell {
            transfer_learning: tl,
            augmentation: aug,
            statistics_pooling: pooling == Pooling::Statistics,
            pooling,
            fold_wa,
            fold_ua,
            wa_mean,
            wa_std,
            ua_mean,
            ua_std,
        })
    };
    let cells = if parallel_cells > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(parallel_cells)
            .build()
            .map_err(|e| Error::Config(format!("cell pool: {e}")))?
            .install(|| grid.par_iter().map(run_cell).collect::<Result<Vec<_>>>())?
    } else {
        grid.iter().map(run_cell).collect::<Result<Vec<_>>>()?
    };
    Ok(AblationReport {
        seed: base.seed,
        n_folds: folds.len(),
        cells,
    })
}
