//! Trains one model with and one without the momenta term and compares
//! them on held-out pairs with a paired t-test.

use emochain::chain::{build_chain, train, ArchConfig, ChainConfig, TrainOptions};
use emochain::corpus::{generate_synthetic_corpus, split_corpus, Split, SplitCounts, SyntheticEmotionSpec};
use emochain::eval::{ablation_report, score_split};
use emochain::registration::{batch_generate_momenta, BatchOptions, RegistrationConfig};

fn main() -> emochain::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let corpus = generate_synthetic_corpus(&SyntheticEmotionSpec::default(), 16, dir.path().join("corpus"))?;
    let corpus = split_corpus(&corpus, SplitCounts::new(8, 0, 8), 3)?;
    let batch = batch_generate_momenta(
        &corpus,
        &RegistrationConfig::default(),
        dir.path().join("momenta"),
        BatchOptions::default(),
    )?;

    let mut scores = Vec::new();
    for regularize_momenta in [true, false] {
        let config = ChainConfig {
            arch: ArchConfig::tiny(),
            max_steps: 200,
            regularize_momenta,
            mfcc_dim: batch.manifest.mfcc_dim,
            ..ChainConfig::default()
        };
        let model = train(build_chain(&config)?, &batch.manifest, &TrainOptions::default())?.model;
        scores.push(score_split(&model, &batch.manifest, Split::Test)?);
    }
    print!("{}", ablation_report(&scores[0], &scores[1])?.to_csv());
    Ok(())
}
