//! Trains briefly, round-trips the checkpoint through disk and converts a
//! held-out utterance.

use emochain::chain::{build_chain, convert, load_checkpoint, train, ArchConfig, ChainConfig, TrainOptions};
use emochain::corpus::{generate_synthetic_corpus, split_corpus, Split, SplitCounts, SyntheticEmotionSpec};
use emochain::eval::{f0_mae, spectral_mae};
use emochain::registration::{batch_generate_momenta, BatchOptions, RegistrationConfig};

fn main() -> emochain::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let corpus = generate_synthetic_corpus(&SyntheticEmotionSpec::default(), 7, dir.path().join("corpus"))?;
    let corpus = split_corpus(&corpus, SplitCounts::new(6, 0, 1), 2)?;
    let batch = batch_generate_momenta(
        &corpus,
        &RegistrationConfig::default(),
        dir.path().join("momenta"),
        BatchOptions::default(),
    )?;
    let config = ChainConfig {
        arch: ArchConfig::tiny(),
        max_steps: 200,
        mfcc_dim: batch.manifest.mfcc_dim,
        ..ChainConfig::default()
    };
    let checkpoint = dir.path().join("model.emom");
    let options = TrainOptions {
        checkpoint: Some(checkpoint.clone()),
        ..TrainOptions::default()
    };
    train(build_chain(&config)?, &batch.manifest, &options)?;
    let model = load_checkpoint(&checkpoint)?;

    let pair = batch.manifest.pairs_in(Split::Test).next().expect("one test pair");
    let f = batch.manifest.load_pair(pair)?;
    let (f0, spec) = convert(&model, &f.f0_source, &f.spec_source)?;
    println!("{}: {} frames", pair.pair_id, f0.len());
    println!("source  F0 MAE {:.2} Hz", f0_mae(&f.f0_source, &f.f0_target, true)?);
    println!("convert F0 MAE {:.2} Hz", f0_mae(&f0, &f.f0_target, true)?);
    println!("convert MFCC MAE {:.4}", spectral_mae(&spec, &f.spec_target)?);
    Ok(())
}
