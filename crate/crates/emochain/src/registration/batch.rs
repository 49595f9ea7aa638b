use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{register, RegistrationConfig, RegistrationResult};
use crate::corpus::{CorpusManifest, PairEntry, Split};
use crate::error::{Error, Result};
use crate::features::write_feature_file;

pub const REPORT_HEADER: &str = "pair_id,status,iters,energy,endpoint_mse,warn_invertibility";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairStatus {
    Converged,
    /// `max_iters` reached; momenta written.
    MaxIters,
    /// Line search stagnated; the best iterate was written.
    Stagnated,
    /// Source and target frame counts differ.
    Misaligned,
    Failed,
}

impl PairStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            PairStatus::Converged => "converged",
            PairStatus::MaxIters => "max_iters",
            PairStatus::Stagnated => "stagnated",
            PairStatus::Misaligned => "misaligned",
            PairStatus::Failed => "failed",
        }
    }

    pub fn wrote_momenta(self) -> bool {
        matches!(self, PairStatus::Converged | PairStatus::MaxIters | PairStatus::Stagnated)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairReport {
    pub pair_id: String,
    pub status: PairStatus,
    pub iterations: usize,
    pub energy: f64,
    pub endpoint_mse: f64,
    pub invertibility_warning: bool,
    pub momenta_path: Option<PathBuf>,
    pub message: Option<String>,
}

#[derive(Debug, Clone)]
pub struct BatchReport {
    pub pairs: Vec<PairReport>,
    /// Input manifest with `momenta_path` filled for every written pair,
    /// rooted at the output directory.
    pub manifest: CorpusManifest,
}

impl BatchReport {
    /// Pairs that did not produce a momenta file.
    pub fn failures(&self) -> usize {
        self.pairs.iter().filter(|p| !p.status.wrote_momenta()).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for p in &self.pairs {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                p.pair_id,
                p.status.as_str(),
                p.iterations,
                p.energy,
                p.endpoint_mse,
                p.invertibility_warning
            )
            .unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchOptions {
    /// Only pairs in this split are registered; `None` takes every pair.
    pub split: Option<Split>,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            split: Some(Split::Train),
        }
    }
}

/// Registers every selected pair of the manifest and writes one EMO1
/// momenta file per pair into `out_dir`. Pair failures are reported, not
/// raised. Work may run in parallel; the report follows manifest order.
pub fn batch_generate_momenta(
    manifest: &CorpusManifest,
    config: &RegistrationConfig,
    out_dir: impl AsRef<Path>,
    options: BatchOptions,
) -> Result<BatchReport> {
    config.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let selected: Vec<&PairEntry> = manifest
        .pairs
        .iter()
        .filter(|p| options.split.is_none_or(|s| p.split == s))
        .collect();
    let reports: Vec<PairReport> = selected
        .par_iter()
        .map(|pair| process_pair(manifest, pair, config, out_dir))
        .collect::<Result<_>>()?;

    let mut updated = manifest.rebased(out_dir)?;
    for report in &reports {
        if let Some(path) = &report.momenta_path {
            let entry = updated
                .pairs
                .iter_mut()
                .find(|p| p.pair_id == report.pair_id)
                .expect("report ids come from the manifest");
            entry.momenta_path = Some(path.to_string_lossy().into_owned());
        }
    }
    Ok(BatchReport {
        pairs: reports,
        manifest: updated,
    })
}

fn process_pair(
    manifest: &CorpusManifest,
    pair: &PairEntry,
    config: &RegistrationConfig,
    out_dir: &Path,
) -> Result<PairReport> {
    let failed = |status: PairStatus, message: String| PairReport {
        pair_id: pair.pair_id.clone(),
        status,
        iterations: 0,
        energy: f64::NAN,
        endpoint_mse: f64::NAN,
        invertibility_warning: false,
        momenta_path: None,
        message: Some(message),
    };
    let features = match manifest.load_pair(pair) {
        Ok(f) => f,
        Err(e) => return Ok(failed(PairStatus::Failed, e.to_string())),
    };
    if features.f0_source.len() != features.f0_target.len() {
        return Ok(failed(
            PairStatus::Misaligned,
            format!(
                "{} source frames vs {} target frames",
                features.f0_source.len(),
                features.f0_target.len()
            ),
        ));
    }
    let interpolated = features
        .f0_source
        .interpolate_unvoiced()
        .and_then(|a| Ok((a, features.f0_target.interpolate_unvoiced()?)));
    let (source, target) = match interpolated {
        Ok(v) => v,
        Err(e) => return Ok(failed(PairStatus::Failed, e.to_string())),
    };
    let (result, status): (RegistrationResult, PairStatus) = match register(&source, &target, config) {
        Ok(r) => {
            let status = if r.converged {
                PairStatus::Converged
            } else {
                PairStatus::MaxIters
            };
            (r, status)
        }
        Err(Error::Stagnation(best)) => (*best, PairStatus::Stagnated),
        Err(e) => return Ok(failed(PairStatus::Failed, e.to_string())),
    };
    let file_name = PathBuf::from(format!("{}.momenta.emo1", pair.pair_id));
    // Unwritable output aborts the batch.
    write_feature_file(out_dir.join(&file_name), &result.momenta.to_matrix()?)?;
    Ok(PairReport {
        pair_id: pair.pair_id.clone(),
        status,
        iterations: result.iterations,
        energy: result.final_energy(),
        endpoint_mse: result.endpoint_mse,
        invertibility_warning: result.invertibility_warning,
        momenta_path: Some(file_name),
        message: None,
    })
}
