//! Conversion error metrics, the paired t-test and the regularization
//! ablation report.

mod ablation;
mod metrics;
mod stats;

pub use ablation::{ablation_report, AblationResult, AblationRow, ConditionScores, ABLATION_HEADER, SIGNIFICANCE_LEVEL};
pub use metrics::{f0_mae, spectral_mae};
pub use stats::{ln_gamma, paired_t_test, regularized_incomplete_beta, student_t_two_sided, TTest};

use crate::chain::{convert, ChainModel};
use crate::corpus::{CorpusManifest, Split};
use crate::error::Result;

/// Converts every pair of `split` with `model` and scores the voiced F0
/// error of each against its target, keyed by emotion pair and utterance.
pub fn score_split(model: &ChainModel, manifest: &CorpusManifest, split: Split) -> Result<ConditionScores> {
    let mut scores = ConditionScores::new();
    for pair in manifest.pairs_in(split) {
        let features = manifest.load_pair(pair)?;
        let (f0, _) = convert(model, &features.f0_source, &features.spec_source)?;
        let mae = f0_mae(&f0, &features.f0_target, true)?;
        scores
            .entry(pair.emotion_pair())
            .or_default()
            .insert(pair.saliency.utterance_id.clone(), mae);
    }
    Ok(scores)
}
