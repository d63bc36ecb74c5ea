//! Confusion matrices, weighted/unweighted accuracy and fold aggregation.
//!
//! WA is the overall accuracy `trace / total`; UA is the mean per-class
//! recall over classes that have test support. Classes without support are
//! left out of the UA mean and listed in [`MetricsReport::unsupported`].

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `counts[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<String>) -> Self {
        let k = classes.len();
        Self {
            classes,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_counts(classes: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = classes.len();
        if counts.len() != k || counts.iter().any(|r| r.len() != k) {
            return Err(Error::Shape(format!("confusion matrix must be {k}x{k}")));
        }
        Ok(Self { classes, counts })
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn accumulate(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let k = self.n_classes();
        for label in [truth, predicted] {
            if label >= k {
                return Err(Error::LabelOutOfRange { label, classes: k });
            }
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    /// Elementwise sum; class lists must agree.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.classes != other.classes {
            return Err(Error::Shape(format!(
                "cannot merge confusion matrices over {:?} and {:?}",
                self.classes, other.classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    /// Recall per class; `None` for classes without support.
    pub fn recalls(&self) -> Vec<Option<f64>> {
        (0..self.n_classes())
            .map(|i| {
                let s = self.support(i);
                (s > 0).then(|| self.counts[i][i] as f64 / s as f64)
            })
            .collect()
    }

    pub fn weighted_accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::Empty("confusion matrix".into()));
        }
        Ok(self.correct() as f64 / total as f64)
    }

    pub fn unweighted_accuracy(&self) -> Result<f64> {
        let supported: Vec<f64> = self.recalls().into_iter().flatten().collect();
        if supported.is_empty() {
            return Err(Error::Empty("confusion matrix".into()));
        }
        Ok(supported.iter().sum::<f64>() / supported.len() as f64)
    }

    /// CSV with a header row and a leading column of class names.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("true\\pred");
        for c in &self.classes {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
        for (name, row) in self.classes.iter().zip(&self.counts) {
            s.push_str(name);
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    /// Row-normalized percentages, one line per true class.
    pub fn render_percent(&self) -> String {
        let width = self.classes.iter().map(|c| c.len()).max().unwrap_or(0).max(8);
        let mut s = format!("{:>width$}", "true\\pred");
        for c in &self.classes {
            let _ = write!(s, " {c:>width$}");
        }
        s.push('\n');
        for (i, name) in self.classes.iter().enumerate() {
            let support = self.support(i);
            let _ = write!(s, "{name:>width$}");
            for &v in &self.counts[i] {
                if support == 0 {
                    let _ = write!(s, " {:>width$}", "-");
                } else {
                    let _ = write!(s, " {:>width$.2}", 100.0 * v as f64 / support as f64);
                }
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fold: usize,
    pub wa: f64,
    pub ua: f64,
    /// `None` for classes without test support.
    pub per_class_recall: Vec<Option<f64>>,
    pub n_total: u64,
    /// Names of classes excluded from the UA mean.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unsupported: Vec<String>,
    /// Test segments shorter than the model minimum, zero-padded to it.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub padded_segments: Vec<String>,
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    pub fn from_confusion(fold: usize, confusion: ConfusionMatrix) -> Result<Self> {
        let recalls = confusion.recalls();
        let unsupported = recalls
            .iter()
            .zip(&confusion.classes)
            .filter(|(r, _)| r.is_none())
            .map(|(_, c)| c.clone())
            .collect();
        Ok(Self {
            fold,
            wa: confusion.weighted_accuracy()?,
            ua: confusion.unweighted_accuracy()?,
            per_class_recall: recalls,
            n_total: confusion.total(),
            unsupported,
            padded_segments: Vec::new(),
            confusion,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub wa_mean: f64,
    pub wa_std: f64,
    pub ua_mean: f64,
    pub ua_std: f64,
    pub pooled_confusion: ConfusionMatrix,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Fold-level averaging plus the pooled (summed) confusion matrix.
pub fn average_over_folds(reports: &[MetricsReport]) -> Result<FoldSummary> {
    let first = reports.first().ok_or_else(|| Error::Empty("fold list".into()))?;
    let mut pooled = ConfusionMatrix::new(first.confusion.classes.clone());
    for r in reports {
        pooled.merge(&r.confusion)?;
    }
    let was: Vec<f64> = reports.iter().map(|r| r.wa).collect();
    let uas: Vec<f64> = reports.iter().map(|r| r.ua).collect();
    let (wa_mean, wa_std) = mean_std(&was);
    let (ua_mean, ua_std) = mean_std(&uas);
    Ok(FoldSummary {
        wa_mean,
        wa_std,
        ua_mean,
        ua_std,
        pooled_confusion: pooled,
    })
}

/// Contents of `metrics.json` in a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub experiment: String,
    pub folds: Vec<MetricsReport>,
    pub summary: FoldSummary,
}

impl MetricsFile {
    pub fn new(experiment: impl Into<String>, folds: Vec<MetricsReport>) -> Result<Self> {
        let summary = average_over_folds(&folds)?;
        Ok(Self {
            experiment: experiment.into(),
            folds,
            summary,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("metrics JSON: {e}")))
    }
}

/// Results-table row: `UA [%]` then `WA [%]`, two decimals.
pub fn table_row(label: &str, ua: f64, wa: f64) -> String {
    format!("{label:<24} {:>7.2} {:>7.2}", 100.0 * ua, 100.0 * wa)
}

pub fn table_header() -> String {
    format!("{:<24} {:>7} {:>7}", "", "UA [%]", "WA [%]")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn hand_computed_two_by_two() {
        let cm = ConfusionMatrix::from_counts(names(2), vec![vec![2, 0], vec![1, 1]]).unwrap();
        assert_eq!(cm.weighted_accuracy().unwrap(), 0.75);
        assert_eq!(cm.unweighted_accuracy().unwrap(), 0.75);
    }

    #[test]
    fn zero_support_class_is_excluded_and_flagged() {
        let cm = ConfusionMatrix::from_counts(names(2), vec![vec![9, 1], vec![0, 0]]).unwrap();
        let r = MetricsReport::from_confusion(0, cm).unwrap();
        assert_eq!(r.ua, 0.9);
        assert_eq!(r.unsupported, vec!["c1".to_string()]);
    }

    #[test]
    fn accumulate_and_bounds() {
        let mut cm = ConfusionMatrix::new(names(3));
        cm.accumulate(0, 0).unwrap();
        assert_eq!(cm.counts[0][0], 1);
        assert!(matches!(cm.accumulate(3, 0), Err(Error::LabelOutOfRange { label: 3, classes: 3 })));
        assert!(ConfusionMatrix::new(names(2)).weighted_accuracy().is_err());
        assert!(ConfusionMatrix::new(names(2)).unweighted_accuracy().is_err());
    }

    #[test]
    fn diagonal_and_off_diagonal() {
        let cm = ConfusionMatrix::from_counts(names(2), vec![vec![3, 0], vec![0, 5]]).unwrap();
        assert_eq!(cm.weighted_accuracy().unwrap(), 1.0);
        let cm = ConfusionMatrix::from_counts(names(2), vec![vec![0, 3], vec![5, 0]]).unwrap();
        assert_eq!(cm.weighted_accuracy().unwrap(), 0.0);
    }

    #[test]
    fn fold_average_uses_population_std() {
        let mk = |c: u64| {
            let cm = ConfusionMatrix::from_counts(names(2), vec![vec![c, 5 - c], vec![5 - c, c]]).unwrap();
            MetricsReport::from_confusion(0, cm).unwrap()
        };
        // WA 0.6 and 0.8.
        let s = average_over_folds(&[mk(3), mk(4)]).unwrap();
        assert!((s.wa_mean - 0.7).abs() < 1e-12);
        assert!((s.wa_std - 0.1).abs() < 1e-12);
        assert_eq!(s.pooled_confusion.counts, vec![vec![7, 3], vec![3, 7]]);
        let s = average_over_folds(&[mk(4), mk(4)]).unwrap();
        assert_eq!((s.wa_mean, s.wa_std), (0.8, 0.0));
    }

    #[test]
    fn csv_and_table_rendering() {
        let cm = ConfusionMatrix::from_counts(vec!["ang".into(), "sad".into()], vec![vec![2, 0], vec![1, 1]]).unwrap();
        assert_eq!(cm.to_csv(), "true\\pred,ang,sad\nang,2,0\nsad,1,1\n");
        assert!(table_row("Exp 1", 0.6161, 0.6602).ends_with("61.61   66.02"));
    }

    #[test]
    fn json_round_trip() {
        let cm = ConfusionMatrix::from_counts(names(2), vec![vec![2, 0], vec![1, 1]]).unwrap();
        let file = MetricsFile::new("exp1", vec![MetricsReport::from_confusion(0, cm).unwrap()]).unwrap();
        assert_eq!(MetricsFile::from_json(&file.to_json()).unwrap(), file);
    }
}
