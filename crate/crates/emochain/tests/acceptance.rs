//! Acceptance criteria. Each test prints one `criterion N: PASS|FAIL` line
//! with its measurements, then asserts the outcome. The line goes straight
//! to the stderr handle so it shows even under the test harness capture.

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::{max_abs_diff, norm_inf, random_contour, related_contour, rng, tree_hashes};
use emochain::chain::{
    build_chain, convert, evaluate_loss, forward_chain, load_training_set, loss_and_gradients, train_samples,
    unified_loss, write_checkpoint, ArchConfig, ChainConfig, ChainModel, ChainTargets, Lambdas, TrainOptions,
};
use emochain::corpus::{
    filter_by_saliency, generate_synthetic_corpus, split_corpus, split_per_emotion_pair, CorpusManifest, Emotion,
    PairEntry, SaliencyRecord, Split, SplitCounts, SyntheticEmotionSpec, DEFAULT_MIN_CORRECT,
};
use emochain::eval::{ablation_report, f0_mae, paired_t_test, ConditionScores, SIGNIFICANCE_LEVEL};
use emochain::features::Momenta;
use emochain::nn::{check_indices, compare_gradients, run_layer_suite, Tensor, SUITE_KINDS};
use emochain::registration::{
    batch_generate_momenta, energy, energy_gradient, register, shoot, solve_momenta_closed_form, BatchOptions,
    KernelSpec, RegistrationConfig,
};
use rand::Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

fn report(criterion: u32, passed: bool, detail: String, elapsed: Duration) {
    let _ = writeln!(
        std::io::stderr(),
        "criterion {criterion}: {} {detail} ({:.1}s)",
        if passed { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    assert!(passed, "criterion {criterion} failed: {detail}");
}

// Criterion 1.
const IDENTITY_CONTOURS: usize = 50;
const IDENTITY_LEN: usize = 128;
const IDENTITY_MOMENTA_TOL: f64 = 1e-6;
const IDENTITY_ENERGY_TOL: f64 = 1e-12;
const IDENTITY_BUDGET: Duration = Duration::from_secs(30);

#[test]
fn criterion_1_registration_identity() {
    let start = Instant::now();
    let mut r = rng(101);
    let (mut worst_m, mut worst_e) = (0.0f64, 0.0f64);
    for _ in 0..IDENTITY_CONTOURS {
        let p = random_contour(&mut r, IDENTITY_LEN);
        let out = register(&p, &p, &RegistrationConfig::default()).unwrap();
        worst_m = worst_m.max(norm_inf(out.momenta.values()));
        worst_e = worst_e.max(out.final_energy());
    }
    let elapsed = start.elapsed();
    let passed = worst_m <= IDENTITY_MOMENTA_TOL
        && worst_e <= IDENTITY_ENERGY_TOL * IDENTITY_LEN as f64
        && elapsed < IDENTITY_BUDGET;
    report(
        1,
        passed,
        format!("{IDENTITY_CONTOURS} contours, max |m| {worst_m:.1e}, max energy {worst_e:.1e}"),
        elapsed,
    );
}

// Criterion 2.
const CLOSED_FORM_PAIRS: usize = 100;
const CLOSED_FORM_LENS: [usize; 3] = [8, 32, 128];
const CLOSED_FORM_TOL: f64 = 1e-6;
const CLOSED_FORM_BUDGET: Duration = Duration::from_secs(120);

#[test]
fn criterion_2_closed_form_oracle() {
    let start = Instant::now();
    let mut r = rng(102);
    let config = RegistrationConfig::default();
    let mut worst = 0.0f64;
    for i in 0..CLOSED_FORM_PAIRS {
        let len = CLOSED_FORM_LENS[i % CLOSED_FORM_LENS.len()];
        let a = random_contour(&mut r, len);
        let b = related_contour(&mut r, &a);
        let got = register(&a, &b, &config).unwrap();
        let exact = solve_momenta_closed_form(&a, &b, &config.kernel, config.lambda).unwrap();
        worst = worst.max(max_abs_diff(got.momenta.values(), exact.values()) / norm_inf(exact.values()));
    }
    let elapsed = start.elapsed();
    report(
        2,
        worst <= CLOSED_FORM_TOL && elapsed < CLOSED_FORM_BUDGET,
        format!("{CLOSED_FORM_PAIRS} pairs, worst relative momenta error {worst:.1e}"),
        elapsed,
    );
}

// Criterion 3.
const GRADIENT_CONFIGS: usize = 20;
const GRADIENT_MAX_LEN: usize = 16;
const GRADIENT_TOL: f64 = 1e-5;
const DRIFT_TOL: f64 = 1e-6;
const DRIFT_STEPS: usize = 20;
const GRADIENT_BUDGET: Duration = Duration::from_secs(60);

/// Central differences with a fixed step; independent of the library's
/// checker.
fn finite_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[test]
fn criterion_3_gradient_correctness() {
    let start = Instant::now();
    let mut r = rng(103);
    let mut worst_grad = 0.0f64;
    let mut worst_drift = 0.0f64;
    for mode in 0..2 {
        for _ in 0..GRADIENT_CONFIGS {
            let len = r.gen_range(4..=GRADIENT_MAX_LEN);
            let sigma_t = r.gen_range(1.5..6.0);
            let kernel = if mode == 0 {
                KernelSpec::time_only(sigma_t)
            } else {
                KernelSpec::time_value(sigma_t, r.gen_range(20.0..80.0))
            };
            let config = RegistrationConfig {
                kernel,
                lambda: r.gen_range(1.0..20.0),
                ..RegistrationConfig::default()
            };
            let a = random_contour(&mut r, len);
            let b = related_contour(&mut r, &a);
            let m: Vec<f64> = (0..len).map(|_| r.gen_range(-2.0..2.0)).collect();
            let g = energy_gradient(&Momenta::new(m.clone()).unwrap(), &a, &b, &config).unwrap();
            let fd = finite_difference(
                |x| energy(&Momenta::new(x.to_vec()).unwrap(), &a, &b, &config).unwrap(),
                &m,
                1e-4,
            );
            worst_grad = worst_grad.max(max_abs_diff(&g, &fd) / norm_inf(&fd));

            if mode == 1 {
                let fit = register(&a, &b, &config).unwrap();
                let path = shoot(&a, &fit.momenta, &kernel, DRIFT_STEPS).unwrap();
                worst_drift = worst_drift.max(path.relative_hamiltonian_drift());
            }
        }
    }
    let elapsed = start.elapsed();
    report(
        3,
        worst_grad <= GRADIENT_TOL && worst_drift <= DRIFT_TOL && elapsed < GRADIENT_BUDGET,
        format!(
            "{GRADIENT_CONFIGS} configs per mode, worst gradient error {worst_grad:.1e}, \
             worst Hamiltonian drift {worst_drift:.1e}"
        ),
        elapsed,
    );
}

// Criterion 4.
const LAYER_INSTANCES: usize = 20;
const LAYER_TOL: f64 = 1e-5;
const CHAIN_TOL: f64 = 1e-4;
const CHAIN_LEN: usize = 16;
const CHAIN_CHECKED: usize = 500;
const LAYER_BUDGET: Duration = Duration::from_secs(120);

/// Worst relative error of the full-chain parameter gradient on a seeded
/// subsample, with unit loss weights and targets kept away from the L1
/// kinks.
fn chain_gradient_error() -> f64 {
    let mut r = rng(104);
    let config = ChainConfig {
        arch: ArchConfig::tiny(),
        context: CHAIN_LEN,
        mfcc_dim: 4,
        ..ChainConfig::default()
    };
    let model = build_chain(&config).unwrap();
    let p = Tensor::from_fn([1, CHAIN_LEN, 1], |_, h, _| 160.0 + 12.0 * (h as f64 / 3.0).sin());
    let s = Tensor::from_fn([1, CHAIN_LEN, 4], |_, h, w| ((h * 7 + w * 3) as f64 * 0.37).sin());
    let out = forward_chain(&model, &p, &s).unwrap();
    let mut away = |t: &Tensor| {
        let data = t
            .data()
            .iter()
            .map(|v| v + r.gen_range(1.0..2.0) * if r.gen_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        Tensor::new(t.shape(), data).unwrap()
    };
    let targets = ChainTargets {
        momenta: away(&out.momenta_hat),
        pitch: away(&out.pitch_hat),
        spectrum: away(&out.spectrum_hat),
    };
    let lambdas = Lambdas {
        momenta: 1.0,
        pitch: 1.0,
        spectrum: 1.0,
    };
    let (_, grads) = loss_and_gradients(&model, &p, &s, &targets, lambdas).unwrap();
    let point = model.params();
    let mut probe = model.clone();
    let loss = |x: &[f64]| {
        probe.set_params(x).unwrap();
        unified_loss(&forward_chain(&probe, &p, &s).unwrap(), &targets, lambdas).unwrap().total
    };
    compare_gradients(loss, &point, &grads.flat(), &check_indices(point.len(), CHAIN_CHECKED, 7)).0
}

#[test]
fn criterion_4_layer_gradient_suite() {
    let start = Instant::now();
    let entries = run_layer_suite(LAYER_INSTANCES, LAYER_TOL, 104).unwrap();
    let mut per_kind: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for e in &entries {
        let slot = per_kind.entry(e.kind).or_default();
        slot.0 += e.report.passed as usize;
        slot.1 = slot.1.max(e.report.worst_error);
    }
    let layers_pass = SUITE_KINDS
        .iter()
        .all(|k| per_kind.get(k).is_some_and(|(passed, _)| *passed == LAYER_INSTANCES));
    let chain_error = chain_gradient_error();
    let elapsed = start.elapsed();
    let kinds: Vec<String> = per_kind
        .iter()
        .map(|(k, (passed, worst))| format!("{k} {passed}/{LAYER_INSTANCES} ({worst:.0e})"))
        .collect();
    report(
        4,
        layers_pass && chain_error <= CHAIN_TOL && elapsed < LAYER_BUDGET,
        format!("{}; full chain worst {chain_error:.1e}", kinds.join(", ")),
        elapsed,
    );
}

// Criterion 5.
const OVERFIT_PAIRS: usize = 8;
const OVERFIT_LR: f64 = 1e-3;
const OVERFIT_STEPS: usize = 2000;
const OVERFIT_RATIO: f64 = 0.01;
const OVERFIT_BUDGET: Duration = Duration::from_secs(300);

#[test]
fn criterion_5_overfit_capacity() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticEmotionSpec::for_emotions(&[Emotion::Angry], 105);
    let corpus = generate_synthetic_corpus(&spec, OVERFIT_PAIRS, dir.path().join("corpus")).unwrap();
    let corpus = split_corpus(&corpus, SplitCounts::new(OVERFIT_PAIRS, 0, 0), 105).unwrap();
    let batch = batch_generate_momenta(&corpus, &RegistrationConfig::default(), dir.path().join("m"), BatchOptions::default())
        .unwrap();
    assert_eq!(batch.failures(), 0);
    let config = ChainConfig {
        arch: ArchConfig::small(),
        lr: OVERFIT_LR,
        max_steps: OVERFIT_STEPS,
        seed: 105,
        mfcc_dim: batch.manifest.mfcc_dim,
        ..ChainConfig::default()
    };
    let set = load_training_set(&batch.manifest, Split::Train, config.context).unwrap();
    let run = || {
        let model = build_chain(&config).unwrap();
        let initial = evaluate_loss(&model, &set, config.lambdas()).unwrap().total;
        let trained = train_samples(model, &set, &[], &TrainOptions::default()).unwrap().model;
        let last = evaluate_loss(&trained, &set, config.lambdas()).unwrap().total;
        (initial, last, write_checkpoint(&trained))
    };
    let (initial, last, first) = run();
    let (_, _, second) = run();
    let elapsed = start.elapsed();
    let ratio = last / initial;
    report(
        5,
        ratio <= OVERFIT_RATIO && first == second && elapsed < OVERFIT_BUDGET,
        format!(
            "loss {initial:.3e} -> {last:.3e} (ratio {ratio:.4}) after {OVERFIT_STEPS} steps; \
             checkpoints identical: {}",
            first == second
        ),
        elapsed,
    );
}

// Criterion 6.
const ABLATION_EMOTIONS: [Emotion; 3] = [Emotion::Angry, Emotion::Happy, Emotion::Sad];
const ABLATION_UTTERANCES: usize = 420;
const ABLATION_SPLIT: (usize, usize, usize) = (200, 20, 40);
const ABLATION_SEEDS: u64 = 10;
const ABLATION_STEPS: usize = 2000;
const ABLATION_LR: f64 = 1e-3;
const ABLATION_VALIDATE_EVERY: usize = 250;
const ABLATION_BUDGET: Duration = Duration::from_secs(3600);

/// Per-utterance voiced F0 MAE of `model` on the test pairs.
fn test_scores(model: &ChainModel, manifest: &CorpusManifest) -> BTreeMap<String, f64> {
    manifest
        .pairs_in(Split::Test)
        .map(|pair| {
            let f = manifest.load_pair(pair).unwrap();
            let (f0, _) = convert(model, &f.f0_source, &f.spec_source).unwrap();
            (pair.saliency.utterance_id.clone(), f0_mae(&f0, &f.f0_target, true).unwrap())
        })
        .collect()
}

fn sample_sd(v: &[f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[test]
fn criterion_6_regularization_ablation() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticEmotionSpec::for_emotions(&ABLATION_EMOTIONS, 106);
    let generated = generate_synthetic_corpus(&spec, ABLATION_UTTERANCES, dir.path().join("corpus")).unwrap();
    let mut corpus = generated.clone();
    corpus.pairs = filter_by_saliency(&generated.pairs, DEFAULT_MIN_CORRECT).unwrap();
    let (train, val, test) = ABLATION_SPLIT;
    let corpus = split_per_emotion_pair(&corpus, SplitCounts::new(train, val, test), 106).unwrap();
    let batch = batch_generate_momenta(&corpus, &RegistrationConfig::default(), dir.path().join("m"), BatchOptions::default())
        .unwrap();
    assert_eq!(batch.failures(), 0);
    let manifest = batch.manifest;

    let mut reg = ConditionScores::new();
    let mut unreg = ConditionScores::new();
    let mut spread = Vec::new();
    for group in manifest.emotion_pairs() {
        let subset = manifest.subset(&group);
        let base = ChainConfig {
            arch: ArchConfig::tiny(),
            lr: ABLATION_LR,
            max_steps: ABLATION_STEPS,
            mfcc_dim: subset.mfcc_dim,
            ..ChainConfig::default()
        };
        let train_set = load_training_set(&subset, Split::Train, base.context).unwrap();
        let val_set = load_training_set(&subset, Split::Val, base.context).unwrap();
        let options = TrainOptions {
            validate_every: ABLATION_VALIDATE_EVERY,
            checkpoint: None,
        };
        let mut seed_means = [Vec::new(), Vec::new()];
        for (slot, (regularize, scores)) in [(true, &mut reg), (false, &mut unreg)].into_iter().enumerate() {
            let mut sums: BTreeMap<String, f64> = BTreeMap::new();
            for seed in 0..ABLATION_SEEDS {
                let config = ChainConfig {
                    seed,
                    regularize_momenta: regularize,
                    ..base.clone()
                };
                let model = train_samples(build_chain(&config).unwrap(), &train_set, &val_set, &options)
                    .unwrap()
                    .model;
                let s = test_scores(&model, &subset);
                seed_means[slot].push(s.values().sum::<f64>() / s.len() as f64);
                for (id, v) in s {
                    *sums.entry(id).or_default() += v;
                }
            }
            let n = ABLATION_SEEDS as f64;
            scores.insert(group.clone(), sums.into_iter().map(|(id, v)| (id, v / n)).collect());
        }
        spread.push((group, sample_sd(&seed_means[0]), sample_sd(&seed_means[1])));
    }

    let result = ablation_report(&reg, &unreg).unwrap();
    let elapsed = start.elapsed();
    let mut passed = elapsed < ABLATION_BUDGET && result.rows.len() == ABLATION_EMOTIONS.len();
    let mut rows = Vec::new();
    for (row, (group, sd_reg, sd_unreg)) in result.rows.iter().zip(&spread) {
        assert_eq!(&row.emotion_pair, group);
        let lower = row.mae_reg < row.mae_unreg && row.significant;
        let tighter = sd_reg <= sd_unreg;
        passed &= lower && tighter && row.n == test;
        rows.push(format!(
            "{group}: reg {:.3} vs unreg {:.3} Hz, t {:.2}, p {:.1e}, seed sd {sd_reg:.3} vs {sd_unreg:.3}",
            row.mae_reg, row.mae_unreg, row.t, row.p
        ));
    }
    report(6, passed, format!("p < {SIGNIFICANCE_LEVEL}; {}", rows.join("; ")), elapsed);
}

// Criterion 7.
const VESUS_SPLITS: [(Emotion, (usize, usize, usize)); 3] = [
    (Emotion::Angry, (1534, 72, 61)),
    (Emotion::Happy, (790, 43, 43)),
    (Emotion::Sad, (1449, 75, 63)),
];
/// Utterances per emotion rated below the saliency threshold.
const VESUS_REJECTED: usize = 300;
const INGEST_BUDGET: Duration = Duration::from_secs(10);

fn rated_pair(emotion: Emotion, index: usize, correct: u32) -> PairEntry {
    let id = format!("{emotion}-{index:05}");
    PairEntry {
        pair_id: id.clone(),
        speaker_id: format!("spk{:02}", index % 10),
        source_emotion: Emotion::Neutral,
        target_emotion: emotion,
        f0_source_path: format!("features/{id}-neutral.f0.emo1"),
        f0_target_path: format!("features/{id}.f0.emo1"),
        spec_source_path: format!("features/{id}-neutral.mfcc.emo1"),
        spec_target_path: format!("features/{id}.mfcc.emo1"),
        momenta_path: None,
        saliency: SaliencyRecord {
            utterance_id: format!("utt{index:05}"),
            emotion,
            raters_total: 10,
            raters_correct: correct,
        },
        split: Split::Unassigned,
    }
}

#[test]
fn criterion_7_ingestion_fidelity() {
    let start = Instant::now();
    let mut r = rng(107);
    let mut pairs = Vec::new();
    for (emotion, (train, val, test)) in VESUS_SPLITS {
        let salient = train + val + test;
        for i in 0..salient + VESUS_REJECTED {
            let correct = if i < salient { r.gen_range(5..=10) } else { r.gen_range(0..5) };
            pairs.push(rated_pair(emotion, i, correct));
        }
    }
    // Boundary of the rule: exactly 5 of 10 passes, 4 of 10 does not.
    let edge = filter_by_saliency(&[rated_pair(Emotion::Sad, 0, 5), rated_pair(Emotion::Sad, 1, 4)], 5).unwrap();
    let rule_ok = edge.len() == 1 && edge[0].saliency.raters_correct == 5;

    let kept = filter_by_saliency(&pairs, DEFAULT_MIN_CORRECT).unwrap();
    let manifest = CorpusManifest::new(".", kept);
    let mut counts_ok = rule_ok;
    let mut found = Vec::new();
    for (emotion, (train, val, test)) in VESUS_SPLITS {
        let group = format!("neutral-{emotion}");
        let split = split_corpus(&manifest.subset(&group), SplitCounts::new(train, val, test), 107).unwrap();
        let count = |s| split.pairs.iter().filter(|p| p.split == s).count();
        let got = (count(Split::Train), count(Split::Val), count(Split::Test));
        counts_ok &= got == (train, val, test) && count(Split::Unassigned) == 0;
        found.push(format!("{group} {got:?}"));
    }
    let elapsed = start.elapsed();
    report(
        7,
        counts_ok && elapsed < INGEST_BUDGET,
        format!("{}; 5-of-10 rule holds: {rule_ok}", found.join(", ")),
        elapsed,
    );
}

// Criterion 8.
const TTEST_SIZES: [usize; 5] = [10, 30, 10, 30, 30];
const TTEST_TOL: f64 = 1e-6;
const TTEST_BUDGET: Duration = Duration::from_secs(5);

#[test]
fn criterion_8_t_test_oracle() {
    let start = Instant::now();
    let mut r = rng(108);
    let mut worst = 0.0f64;
    for (case, n) in TTEST_SIZES.into_iter().enumerate() {
        let a: Vec<f64> = (0..n).map(|_| r.gen_range(2.0..8.0)).collect();
        let b: Vec<f64> = a.iter().map(|v| v + 0.2 * case as f64 + r.gen_range(-1.0..1.0)).collect();
        let test = paired_t_test(&a, &b).unwrap();
        let reference = StudentsT::new(0.0, 1.0, (n - 1) as f64).unwrap();
        worst = worst.max((test.p - 2.0 * reference.cdf(-test.t.abs())).abs());
    }
    let elapsed = start.elapsed();
    report(
        8,
        worst <= TTEST_TOL && elapsed < TTEST_BUDGET,
        format!("{} cases, worst |p - reference| {worst:.1e}", TTEST_SIZES.len()),
        elapsed,
    );
}

// Criterion 9.
const PIPELINE_STEPS: &str = "150";

fn run_pipeline(dir: &Path) {
    let run = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_emochain"))
            .current_dir(dir)
            .args(["--seed", "109"])
            .args(args)
            .output()
            .unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    run(&["synth-corpus", "--pairs", "50", "--train", "20", "--val", "4", "--test", "8", "--out", "corpus"]);
    run(&["gen-momenta", "--manifest", "corpus/manifest.json", "--out", "momenta"]);
    for (name, flag) in [("reg", "true"), ("unreg", "false")] {
        run(&[
            "train",
            "--manifest",
            "momenta/manifest.json",
            "--arch",
            "tiny",
            "--lr",
            "1e-3",
            "--max-steps",
            PIPELINE_STEPS,
            "--validate-every",
            "50",
            "--regularize-momenta",
            flag,
            "--out",
            name,
        ]);
    }
    run(&[
        "eval-ablation",
        "--manifest",
        "momenta/manifest.json",
        "--reg",
        "reg/model.emom",
        "--unreg",
        "unreg/model.emom",
        "--out",
        "eval",
    ]);
}

#[test]
fn criterion_9_end_to_end_determinism() {
    let start = Instant::now();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        run_pipeline(d.path());
    }
    let mut stages = Vec::new();
    let mut identical = true;
    for stage in ["corpus", "momenta", "reg", "unreg", "eval"] {
        let [a, b] = [0, 1].map(|i| tree_hashes(&dirs[i].path().join(stage)));
        let same = !a.is_empty() && a == b;
        identical &= same;
        stages.push(format!("{stage} {} files {}", a.len(), if same { "identical" } else { "DIFFER" }));
    }
    report(9, identical, stages.join(", "), start.elapsed());
}
