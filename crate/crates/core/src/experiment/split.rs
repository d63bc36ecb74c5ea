//! Leave-one-session-out and stratified k-fold splits.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::manifest::SegmentRecord;
use crate::rng::Rng;

/// Indices into the record list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    /// Held-out session for LOSO, `fold<i>` for k-fold.
    pub name: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// One fold per session (sorted by name); fold `i` tests on session `i`.
/// `expected_sessions` guards against malformed manifests; pass `None` for
/// custom data with any session count ≥ 2.
pub fn loso_splits(records: &[SegmentRecord], expected_sessions: Option<usize>) -> Result<Vec<Fold>> {
    let sessions: BTreeSet<&str> = records.iter().map(|r| r.session.as_str()).collect();
    match expected_sessions {
        Some(n) if sessions.len() != n => {
            return Err(Error::Split(format!(
                "leave-one-session-out needs exactly {n} sessions, manifest has {}",
                sessions.len()
            )))
        }
        None if sessions.len() < 2 => {
            return Err(Error::Split("leave-one-session-out needs at least 2 sessions".into()))
        }
        _ => {}
    }
    let mut speaker_session: BTreeMap<&str, &str> = BTreeMap::new();
    for r in records {
        if let Some(prev) = speaker_session.insert(&r.speaker, &r.session) {
            if prev != r.session {
                return Err(Error::Split(format!(
                    "speaker {:?} appears in sessions {prev:?} and {:?}",
                    r.speaker, r.session
                )));
            }
        }
    }
    Ok(sessions
        .iter()
        .enumerate()
        .map(|(index, &session)| {
            let (test, train) = (0..records.len()).partition(|&i| records[i].session == session);
            Fold {
                index,
                name: session.to_string(),
                train,
                test,
            }
        })
        .collect())
}

/// Stratified k-fold: each class is shuffled and dealt round-robin over the
/// folds, continuing where the previous class stopped so fold sizes stay
/// balanced too.
pub fn kfold_splits(labels: &[usize], k: usize, rng: &mut Rng) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::Split(format!("k-fold needs k >= 2, got {k}")));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    if let Some((class, members)) = by_class.iter().find(|(_, m)| m.len() < k) {
        return Err(Error::Split(format!(
            "class {class} has {} segments, fewer than k = {k}",
            members.len()
        )));
    }
    let mut test_sets = vec![Vec::new(); k];
    let mut next = 0;
    for members in by_class.values_mut() {
        members.shuffle(rng);
        for &i in members.iter() {
            test_sets[next].push(i);
            next = (next + 1) % k;
        }
    }
    Ok(test_sets
        .into_iter()
        .enumerate()
        .map(|(index, mut test)| {
            test.sort_unstable();
            let held: BTreeSet<usize> = test.iter().copied().collect();
            let train = (0..labels.len()).filter(|i| !held.contains(i)).collect();
            Fold {
                index,
                name: format!("fold{}", index + 1),
                train,
                test,
            }
        })
        .collect())
}
