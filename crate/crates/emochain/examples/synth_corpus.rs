//! Generates a small synthetic corpus, applies the saliency filter and a
//! seeded split, and prints what survived.

use emochain::corpus::{
    filter_by_saliency, generate_synthetic_corpus, split_per_emotion_pair, CorpusManifest, Emotion, Split,
    SplitCounts, SyntheticEmotionSpec, DEFAULT_MIN_CORRECT,
};

fn main() -> emochain::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let spec = SyntheticEmotionSpec::for_emotions(&[Emotion::Angry, Emotion::Sad], 7);
    let corpus = generate_synthetic_corpus(&spec, 24, dir.path())?;
    let salient = CorpusManifest::new(corpus.root(), filter_by_saliency(&corpus.pairs, DEFAULT_MIN_CORRECT)?);
    println!("{} pairs generated, {} pass the saliency filter", corpus.pairs.len(), salient.pairs.len());

    let split = split_per_emotion_pair(&salient, SplitCounts::new(8, 2, 4), 7)?;
    for pair in split.emotion_pairs() {
        let sub = split.subset(&pair);
        let [train, val, test] = [Split::Train, Split::Val, Split::Test].map(|s| sub.pairs_in(s).count());
        println!("{pair}: train {train}, val {val}, test {test}");
    }
    Ok(())
}
