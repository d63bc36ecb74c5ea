//! Manifest CSV (`id,path,label,session,speaker,duration`) and class sets.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const COLUMNS: [&str; 6] = ["id", "path", "label", "session", "speaker", "duration"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub id: String,
    /// Absolute, or relative to the manifest's directory.
    pub path: PathBuf,
    pub label: String,
    pub session: String,
    pub speaker: String,
    /// Seconds.
    pub duration: f64,
}

/// Reads and validates a manifest. Relative audio paths are resolved against
/// the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<SegmentRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_manifest(&text, base)
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<SegmentRecord>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Manifest(format!("unreadable header: {e}")))?
        .clone();
    let mut index = [0usize; 6];
    for (slot, col) in index.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == col)
            .ok_or_else(|| Error::Manifest(format!("missing column {col:?} (need {})", COLUMNS.join(","))))?;
    }
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (row, result) in reader.records().enumerate() {
        let line = row + 2;
        let rec = result.map_err(|e| Error::Manifest(format!("line {line}: {e}")))?;
        let field = |i: usize| rec.get(index[i]).unwrap_or("").to_string();
        let id = field(0);
        if id.is_empty() {
            return Err(Error::Manifest(format!("line {line}: empty id")));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::Manifest(format!("duplicate id {id:?} (line {line})")));
        }
        let (session, speaker) = (field(3), field(4));
        if session.is_empty() || speaker.is_empty() {
            return Err(Error::Manifest(format!("line {line}: empty session or speaker for {id:?}")));
        }
        let duration: f64 = field(5)
            .parse()
            .map_err(|_| Error::Manifest(format!("line {line}: bad duration {:?}", field(5))))?;
        let raw = PathBuf::from(field(1));
        let path = if raw.is_absolute() { raw } else { base.join(raw) };
        records.push(SegmentRecord {
            id,
            path,
            label: field(2),
            session,
            speaker,
            duration,
        });
    }
    Ok(records)
}

/// Writes a manifest with paths relative to `base` when possible.
pub fn write_manifest(path: &Path, records: &[SegmentRecord]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Manifest(e.to_string());
    w.write_record(COLUMNS).map_err(csv_err)?;
    for r in records {
        let p = r.path.strip_prefix(base).unwrap_or(&r.path);
        w.write_record([
            r.id.as_str(),
            &p.to_string_lossy(),
            &r.label,
            &r.session,
            &r.speaker,
            &format!("{:.4}", r.duration),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Manifest(e.to_string()))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentName {
    Exp1,
    Exp2,
    Exp3,
    Custom,
}

impl fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentName::Exp1 => "exp1",
            ExperimentName::Exp2 => "exp2",
            ExperimentName::Exp3 => "exp3",
            ExperimentName::Custom => "custom",
        })
    }
}

impl FromStr for ExperimentName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp1" => Ok(Self::Exp1),
            "exp2" => Ok(Self::Exp2),
            "exp3" => Ok(Self::Exp3),
            "custom" => Ok(Self::Custom),
            other => Err(Error::Config(format!(
                "unknown experiment {other:?} (expected exp1, exp2, exp3 or custom)"
            ))),
        }
    }
}

/// Class set of an experiment plus label merges (`from -> into`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentDef {
    pub name: ExperimentName,
    pub classes: Vec<String>,
    pub merge: Vec<(String, String)>,
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

impl ExperimentDef {
    pub fn exp1() -> Self {
        Self {
            name: ExperimentName::Exp1,
            classes: strings(&["angry", "happy", "neutral", "sad"]),
            merge: Vec::new(),
        }
    }

    pub fn exp2() -> Self {
        Self {
            name: ExperimentName::Exp2,
            classes: strings(&["angry", "excited", "neutral", "sad"]),
            merge: Vec::new(),
        }
    }

    /// Exp1 classes with "excited" folded into "happy".
    pub fn exp3() -> Self {
        Self {
            name: ExperimentName::Exp3,
            classes: strings(&["angry", "happy", "neutral", "sad"]),
            merge: vec![("excited".into(), "happy".into())],
        }
    }

    pub fn custom(classes: Vec<String>) -> Self {
        Self {
            name: ExperimentName::Custom,
            classes,
            merge: Vec::new(),
        }
    }

    /// Custom experiment over the sorted distinct labels of `records`.
    pub fn from_labels(records: &[SegmentRecord]) -> Self {
        let set: BTreeSet<&str> = records.iter().map(|r| r.label.as_str()).collect();
        Self::custom(set.into_iter().map(String::from).collect())
    }

    /// Speaker-identification task over the sorted distinct speakers.
    pub fn speakers(records: &[SegmentRecord]) -> Self {
        let set: BTreeSet<&str> = records.iter().map(|r| r.speaker.as_str()).collect();
        Self::custom(set.into_iter().map(String::from).collect())
    }

    pub fn by_name(name: ExperimentName, records: &[SegmentRecord]) -> Self {
        match name {
            ExperimentName::Exp1 => Self::exp1(),
            ExperimentName::Exp2 => Self::exp2(),
            ExperimentName::Exp3 => Self::exp3(),
            ExperimentName::Custom => Self::from_labels(records),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_index(&self, label: &str) -> Result<usize> {
        let mapped = self
            .merge
            .iter()
            .find(|(from, _)| from == label)
            .map_or(label, |(_, into)| into.as_str());
        self.classes.iter().position(|c| c == mapped).ok_or_else(|| {
            let mut allowed = self.classes.clone();
            allowed.extend(self.merge.iter().map(|(from, _)| from.clone()));
            Error::Manifest(format!(
                "label {label:?} not allowed in {} (allowed: {})",
                self.name,
                allowed.join(", ")
            ))
        })
    }

    /// Class index of every record; any unknown label is an error.
    pub fn labels(&self, records: &[SegmentRecord]) -> Result<Vec<usize>> {
        records
            .iter()
            .map(|r| {
                self.class_index(&r.label)
                    .map_err(|e| Error::Manifest(format!("segment {:?}: {e}", r.id)))
            })
            .collect()
    }

    /// Speaker index of every record (for [`ExperimentDef::speakers`]).
    pub fn speaker_labels(&self, records: &[SegmentRecord]) -> Result<Vec<usize>> {
        records.iter().map(|r| self.class_index(&r.speaker)).collect()
    }
}
