//! Registers every training pair of a synthetic corpus and prints the
//! per-pair report.

use emochain::corpus::{generate_synthetic_corpus, split_corpus, SplitCounts, SyntheticEmotionSpec};
use emochain::registration::{batch_generate_momenta, BatchOptions, RegistrationConfig};

fn main() -> emochain::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let corpus = generate_synthetic_corpus(&SyntheticEmotionSpec::default(), 6, dir.path().join("corpus"))?;
    let corpus = split_corpus(&corpus, SplitCounts::new(6, 0, 0), 0)?;
    let batch = batch_generate_momenta(
        &corpus,
        &RegistrationConfig::default(),
        dir.path().join("momenta"),
        BatchOptions::default(),
    )?;
    print!("{}", batch.to_csv());
    println!("{} failures", batch.failures());
    Ok(())
}
