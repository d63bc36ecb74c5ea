//! Manifest-wide feature extraction on a worker pool.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::dsp::{load_wav, FrontendConfig, LogMelExtractor, MelSpectrogram};
use crate::error::{Error, Result};
use crate::experiment::manifest::SegmentRecord;

/// Loads, extracts and normalizes one spectrogram per record.
/// `workers = 0` uses the global pool. Failures are collected per row and
/// reported together.
pub fn extract_features(
    records: &[SegmentRecord],
    config: &FrontendConfig,
    workers: usize,
) -> Result<Vec<MelSpectrogram>> {
    let job = || {
        let extractors: std::sync::Mutex<BTreeMap<u32, std::sync::Arc<LogMelExtractor>>> = Default::default();
        let results: Vec<Result<MelSpectrogram>> = records
            .par_iter()
            .map(|r| {
                let audio = load_wav(&r.path)?;
                let extractor = {
                    let mut map = extractors.lock().unwrap();
                    match map.get(&audio.sample_rate) {
                        Some(e) => e.clone(),
                        None => {
                            let e = std::sync::Arc::new(LogMelExtractor::new(config, audio.sample_rate)?);
                            map.insert(audio.sample_rate, e.clone());
                            e
                        }
                    }
                };
                let mut spec = extractor.extract(&audio)?;
                crate::dsp::normalize_in_place(&mut spec, config.norm_epsilon);
                Ok(spec)
            })
            .collect();
        results
    };
    let results = if workers == 0 {
        job()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?
            .install(job)
    };
    let mut specs = Vec::with_capacity(records.len());
    let mut failures = Vec::new();
    for (r, res) in records.iter().zip(results) {
        match res {
            Ok(s) => specs.push(s),
            Err(Error::Config(msg)) => return Err(Error::Config(msg)),
            Err(e) => failures.push(format!("  {}: {e}", r.id)),
        }
    }
    if !failures.is_empty() {
        return Err(Error::Manifest(format!(
            "{} of {} segments failed:\n{}",
            failures.len(),
            records.len(),
            failures.join("\n")
        )));
    }
    Ok(specs)
}
