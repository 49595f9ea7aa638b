use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{
    Cli, Command, ConvertArgs, EvalAblationArgs, GenMomentaArgs, GradcheckArgs, RegisterArgs, SplitArg,
    SynthArgs, TrainArgs,
};
use crate::chain::{build_chain, convert, load_checkpoint, train, ArchConfig, ChainConfig, ChainModel, TrainOptions};
use crate::corpus::{
    filter_by_saliency, generate_synthetic_corpus, hold_out_utterances, split_per_emotion_pair, CorpusManifest,
    Split, SyntheticEmotionSpec, MANIFEST_FILE,
};
use crate::error::{Error, Result};
use crate::eval::{ablation_report, score_split, ConditionScores};
use crate::features::{read_feature_file, write_feature_file, F0Contour, SpectralFrames};
use crate::nn::run_layer_suite;
use crate::registration::{batch_generate_momenta, register, BatchOptions, PairStatus};
use crate::seed;

pub(super) struct Outcome {
    pub summary: String,
    /// Some items failed; the report was still written.
    pub partial: bool,
}

impl Outcome {
    fn done(summary: String) -> Self {
        Self { summary, partial: false }
    }
}

pub(super) fn execute(cli: &Cli) -> Result<Outcome> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::SynthCorpus(a) => synth_corpus(cli, a),
        Command::GenMomenta(a) => gen_momenta(cli, a),
        Command::Register(a) => register_pair(cli, a),
        Command::Train(a) => train_model(cli, a),
        Command::Convert(a) => convert_utterance(cli, a),
        Command::EvalAblation(a) => eval_ablation(cli, a),
        Command::Gradcheck(a) => gradcheck(cli, a),
    })
}

fn out_dir(cli: &Cli) -> Result<&Path> {
    fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
    Ok(&cli.out)
}

fn write_text(path: PathBuf, text: &str) -> Result<()> {
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn split_filter(split: SplitArg) -> Option<Split> {
    match split {
        SplitArg::Train => Some(Split::Train),
        SplitArg::Val => Some(Split::Val),
        SplitArg::Test => Some(Split::Test),
        SplitArg::All => None,
    }
}

fn synth_corpus(cli: &Cli, a: &SynthArgs) -> Result<Outcome> {
    let out = out_dir(cli)?;
    let spec = SyntheticEmotionSpec {
        min_frames: a.min_frames,
        max_frames: a.max_frames,
        speakers: a.speakers,
        ..SyntheticEmotionSpec::for_emotions(&a.emotions, cli.seed)
    };
    let generated = generate_synthetic_corpus(&spec, a.pairs, out)?;
    let mut manifest = generated.clone();
    manifest.pairs = filter_by_saliency(&generated.pairs, a.min_correct)?;
    let counts = a.split.counts();
    if counts.total() > 0 {
        manifest = split_per_emotion_pair(&manifest, counts, seed::derive_seed(cli.seed, "split", 0))?;
    }
    if a.hold_out_utterances > 0 {
        manifest = hold_out_utterances(&manifest, a.hold_out_utterances, seed::derive_seed(cli.seed, "hold-out", 0))?;
    }
    manifest.save(out.join(MANIFEST_FILE))?;
    let spec_json = serde_json::to_string_pretty(&spec).expect("spec serializes");
    write_text(out.join("synth_spec.json"), &(spec_json + "\n"))?;
    let count = |s| manifest.pairs.iter().filter(|p| p.split == s).count();
    Ok(Outcome::done(format!(
        "synth-corpus: {} of {} pairs kept (min_correct {}), train/val/test {}/{}/{}, written to {}",
        manifest.pairs.len(),
        generated.pairs.len(),
        a.min_correct,
        count(Split::Train),
        count(Split::Val),
        count(Split::Test),
        out.display()
    )))
}

fn gen_momenta(cli: &Cli, a: &GenMomentaArgs) -> Result<Outcome> {
    let manifest = CorpusManifest::load(&a.manifest)?;
    let config = a.registration.config();
    let out = out_dir(cli)?;
    let report = batch_generate_momenta(&manifest, &config, out, BatchOptions { split: split_filter(a.split) })?;
    write_text(out.join("report.csv"), &report.to_csv())?;
    report.manifest.save(out.join(MANIFEST_FILE))?;
    let mut tally: BTreeMap<&str, usize> = BTreeMap::new();
    for p in &report.pairs {
        *tally.entry(p.status.as_str()).or_default() += 1;
    }
    let breakdown: Vec<String> = tally.iter().map(|(k, v)| format!("{k} {v}")).collect();
    let failures = report.failures();
    for p in report.pairs.iter().filter(|p| !p.status.wrote_momenta()) {
        eprintln!(
            "warning: {} {}: {}",
            p.pair_id,
            p.status.as_str(),
            p.message.as_deref().unwrap_or("")
        );
    }
    Ok(Outcome {
        summary: format!(
            "gen-momenta: {} pairs ({}), {} failed, written to {}",
            report.pairs.len(),
            if breakdown.is_empty() { "none".to_string() } else { breakdown.join(", ") },
            failures,
            out.display()
        ),
        partial: failures > 0,
    })
}

fn read_f0(path: &Path) -> Result<F0Contour> {
    F0Contour::from_matrix(&read_feature_file(path)?)
}

fn register_pair(cli: &Cli, a: &RegisterArgs) -> Result<Outcome> {
    let source = read_f0(&a.source)?.interpolate_unvoiced()?;
    let target = read_f0(&a.target)?.interpolate_unvoiced()?;
    let config = a.registration.config();
    let (result, stagnated) = match register(&source, &target, &config) {
        Ok(r) => (r, None),
        Err(Error::Stagnation(best)) => {
            let iterations = best.iterations;
            (*best, Some(iterations))
        }
        Err(e) => return Err(e),
    };
    let out = out_dir(cli)?;
    write_feature_file(out.join("momenta.emo1"), &result.momenta.to_matrix()?)?;
    write_feature_file(out.join("warped.f0.emo1"), &result.warped.to_matrix())?;
    let mut trace = String::from("iteration,energy\n");
    for (i, e) in result.energy_trace.iter().enumerate() {
        writeln!(trace, "{i},{e}").unwrap();
    }
    write_text(out.join("energy_trace.csv"), &trace)?;
    if let Some(iterations) = stagnated {
        return Err(Error::Numeric(format!(
            "line search stagnated after {iterations} iterations; best iterate written to {}",
            out.display()
        )));
    }
    let status = if result.converged { PairStatus::Converged } else { PairStatus::MaxIters };
    Ok(Outcome::done(format!(
        "register: {} after {} iterations, energy {:.6e}, endpoint mse {:.6e}{}",
        status.as_str(),
        result.iterations,
        result.final_energy(),
        result.endpoint_mse,
        if result.invertibility_warning { ", warp not invertible" } else { "" }
    )))
}

fn train_model(cli: &Cli, a: &TrainArgs) -> Result<Outcome> {
    let full = CorpusManifest::load(&a.manifest)?;
    let groups = full.emotion_pairs();
    let manifest = match (&a.emotion_pair, groups.len()) {
        (Some(pair), _) if groups.contains(pair) => full.subset(pair),
        (Some(pair), _) => return Err(Error::Data(format!("manifest has no emotion pair {pair:?}"))),
        (None, 0 | 1) => full,
        (None, _) => {
            return Err(Error::Config(format!(
                "manifest holds {}; choose one with --emotion-pair",
                groups.join(", ")
            )))
        }
    };
    let config = ChainConfig {
        lambda_e: a.lambda_e,
        lambda_d: a.lambda_d,
        lambda_p: a.lambda_p,
        lr: a.lr,
        max_steps: a.max_steps,
        seed: cli.seed,
        arch: ArchConfig::preset(a.arch.name())?,
        regularize_momenta: a.regularize_momenta,
        context: a.context,
        mfcc_dim: manifest.mfcc_dim,
    };
    let out = out_dir(cli)?;
    let checkpoint = out.join("model.emom");
    let options = TrainOptions {
        validate_every: a.validate_every,
        checkpoint: Some(checkpoint.clone()),
    };
    let report = train(build_chain(&config)?, &manifest, &options)?;
    write_text(out.join("loss.csv"), &report.to_csv())?;
    let mut val = String::from("step,total\n");
    for v in &report.validation {
        writeln!(val, "{},{}", v.step, v.total).unwrap();
    }
    write_text(out.join("validation.csv"), &val)?;
    let last = report.losses.last().map_or(f64::NAN, |l| l.loss.total);
    Ok(Outcome::done(format!(
        "train: {} steps, last loss {:.6e}, kept step {}, checkpoint {}",
        report.losses.len(),
        last,
        report.best_step.map_or("final".to_string(), |s| s.to_string()),
        checkpoint.display()
    )))
}

fn convert_utterance(cli: &Cli, a: &ConvertArgs) -> Result<Outcome> {
    let model = load_checkpoint(&a.checkpoint)?;
    let f0 = read_f0(&a.f0)?;
    let spec = SpectralFrames::new(read_feature_file(&a.spec)?)?;
    let (f0_out, spec_out) = convert(&model, &f0, &spec)?;
    let out = out_dir(cli)?;
    write_feature_file(out.join("converted.f0.emo1"), &f0_out.to_matrix())?;
    write_feature_file(out.join("converted.mfcc.emo1"), spec_out.matrix())?;
    Ok(Outcome::done(format!(
        "convert: {} frames written to {}",
        f0_out.len(),
        out.display()
    )))
}

/// `[EMOTION_PAIR=]PATH` entries grouped by emotion pair; `None` keys
/// serve every pair.
fn parse_checkpoint_specs(specs: &[String]) -> BTreeMap<Option<String>, Vec<PathBuf>> {
    let mut map: BTreeMap<Option<String>, Vec<PathBuf>> = BTreeMap::new();
    for spec in specs {
        let (key, path) = match spec.split_once('=') {
            Some((pair, path)) => (Some(pair.to_string()), path),
            None => (None, spec.as_str()),
        };
        map.entry(key).or_default().push(PathBuf::from(path));
    }
    map
}

/// Per-utterance MAE averaged over every checkpoint that serves the pair.
fn score_condition(manifest: &CorpusManifest, split: Split, specs: &[String]) -> Result<ConditionScores> {
    let specs = parse_checkpoint_specs(specs);
    let groups = manifest.emotion_pairs();
    if let Some(unknown) = specs.keys().flatten().find(|k| !groups.contains(k)) {
        return Err(Error::Data(format!("manifest has no emotion pair {unknown:?}")));
    }
    let mut cache: BTreeMap<PathBuf, ChainModel> = BTreeMap::new();
    let mut scores = ConditionScores::new();
    for group in groups {
        let paths: Vec<&PathBuf> = specs
            .get(&Some(group.clone()))
            .into_iter()
            .chain(specs.get(&None))
            .flatten()
            .collect();
        let subset = manifest.subset(&group);
        if paths.is_empty() || subset.pairs_in(split).next().is_none() {
            continue;
        }
        let mut sums: BTreeMap<String, f64> = BTreeMap::new();
        for path in &paths {
            if !cache.contains_key(*path) {
                cache.insert((*path).clone(), load_checkpoint(path)?);
            }
            let s = score_split(&cache[*path], &subset, split)?;
            for (id, mae) in s.into_values().flatten() {
                *sums.entry(id).or_default() += mae;
            }
        }
        let n = paths.len() as f64;
        scores.insert(group, sums.into_iter().map(|(id, v)| (id, v / n)).collect());
    }
    Ok(scores)
}

fn eval_ablation(cli: &Cli, a: &EvalAblationArgs) -> Result<Outcome> {
    let manifest = CorpusManifest::load(&a.manifest)?;
    let Some(split) = split_filter(a.split) else {
        return Err(Error::Config("eval-ablation needs a single split".into()));
    };
    let reg = score_condition(&manifest, split, &a.reg)?;
    let unreg = score_condition(&manifest, split, &a.unreg)?;
    let result = ablation_report(&reg, &unreg)?;
    if result.rows.is_empty() {
        return Err(Error::Data(format!("no {split:?} pairs scored").to_lowercase()));
    }
    let out = out_dir(cli)?;
    write_text(out.join("ablation.csv"), &result.to_csv())?;
    let mut per_utt = String::from("emotion_pair,utterance_id,mae_reg,mae_unreg\n");
    for (group, utterances) in &reg {
        for (id, v) in utterances {
            writeln!(per_utt, "{group},{id},{v},{}", unreg[group][id]).unwrap();
        }
    }
    write_text(out.join("scores.csv"), &per_utt)?;
    let rows: Vec<String> = result
        .rows
        .iter()
        .map(|r| {
            format!(
                "{} reg {:.3} vs unreg {:.3} Hz (n {}, t {:.3}, p {:.3e}{})",
                r.emotion_pair,
                r.mae_reg,
                r.mae_unreg,
                r.n,
                r.t,
                r.p,
                if r.significant { ", significant" } else { "" }
            )
        })
        .collect();
    Ok(Outcome::done(format!("eval-ablation: {}", rows.join("; "))))
}

fn gradcheck(cli: &Cli, a: &GradcheckArgs) -> Result<Outcome> {
    let entries = run_layer_suite(a.instances, a.tol, cli.seed)?;
    let out = out_dir(cli)?;
    let mut csv = String::from("kind,instance,input_shape,checked,worst_error,passed\n");
    for e in &entries {
        let [c, h, w] = e.input_shape;
        writeln!(
            csv,
            "{},{},{c}x{h}x{w},{},{},{}",
            e.kind, e.instance, e.report.checked, e.report.worst_error, e.report.passed
        )
        .unwrap();
    }
    write_text(out.join("gradcheck.csv"), &csv)?;
    let failed: Vec<String> = entries
        .iter()
        .filter(|e| !e.report.passed)
        .map(|e| format!("{}#{}", e.kind, e.instance))
        .collect();
    let worst = entries.iter().map(|e| e.report.worst_error).fold(0.0, f64::max);
    if !failed.is_empty() {
        return Err(Error::Numeric(format!(
            "{} of {} gradient checks failed at tol {}: {}",
            failed.len(),
            entries.len(),
            a.tol,
            failed.join(", ")
        )));
    }
    Ok(Outcome::done(format!(
        "gradcheck: {} checks passed at tol {}, worst relative error {:.3e}",
        entries.len(),
        a.tol,
        worst
    )))
}

