//! Trains a tiny chained model for a few hundred steps on a synthetic
//! corpus and prints the loss curve and validation picks.

use emochain::chain::{build_chain, train, ArchConfig, ChainConfig, TrainOptions};
use emochain::corpus::{generate_synthetic_corpus, split_corpus, SplitCounts, SyntheticEmotionSpec};
use emochain::registration::{batch_generate_momenta, BatchOptions, RegistrationConfig};

fn main() -> emochain::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let corpus = generate_synthetic_corpus(&SyntheticEmotionSpec::default(), 8, dir.path().join("corpus"))?;
    let corpus = split_corpus(&corpus, SplitCounts::new(6, 2, 0), 1)?;
    let batch = batch_generate_momenta(
        &corpus,
        &RegistrationConfig::default(),
        dir.path().join("momenta"),
        BatchOptions { split: None },
    )?;

    let config = ChainConfig {
        arch: ArchConfig::tiny(),
        max_steps: 300,
        mfcc_dim: batch.manifest.mfcc_dim,
        ..ChainConfig::default()
    };
    let options = TrainOptions {
        validate_every: 100,
        checkpoint: Some(dir.path().join("model.emom")),
    };
    let report = train(build_chain(&config)?, &batch.manifest, &options)?;
    for r in report.losses.iter().step_by(50) {
        println!("step {:>4}: loss {:.5}", r.step, r.loss.total);
    }
    for v in &report.validation {
        println!("validation at step {}: {:.5}", v.step, v.total);
    }
    println!("kept step {:?}", report.best_step);
    Ok(())
}
