mod common;

use common::{max_abs_diff, norm_inf, random_contour, related_contour, rng, tree_hashes};
use emochain::corpus::{generate_synthetic_corpus, CorpusManifest, Emotion, SyntheticEmotionSpec};
use emochain::features::Momenta;
use emochain::registration::{
    batch_generate_momenta, energy, energy_gradient, gram_matrix, register, shoot, solve_momenta_closed_form,
    BatchOptions, KernelMode, KernelSpec, RegistrationConfig,
};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::Rng;

fn config(kernel: KernelSpec) -> RegistrationConfig {
    RegistrationConfig {
        kernel,
        ..RegistrationConfig::default()
    }
}

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
fn identity_registration_has_zero_momenta() {
    let mut r = rng(1);
    for _ in 0..10 {
        let p = random_contour(&mut r, 128);
        let out = register(&p, &p, &RegistrationConfig::default()).unwrap();
        assert!(norm_inf(out.momenta.values()) <= 1e-6);
        assert!(out.final_energy() <= 1e-12 * 128.0);
    }
}

#[test]
fn time_only_registration_matches_closed_form() {
    let mut r = rng(2);
    for len in [8, 32, 128] {
        for _ in 0..5 {
            let a = random_contour(&mut r, len);
            let b = related_contour(&mut r, &a);
            let c = RegistrationConfig::default();
            let got = register(&a, &b, &c).unwrap();
            let exact = solve_momenta_closed_form(&a, &b, &c.kernel, c.lambda).unwrap();
            let err = max_abs_diff(got.momenta.values(), exact.values());
            assert!(err <= 1e-6 * norm_inf(exact.values()), "T={len} err {err}");
        }
    }
}

#[test]
fn energy_gradient_matches_finite_differences() {
    let mut r = rng(3);
    for kernel in [KernelSpec::time_only(3.0), KernelSpec::time_value(3.0, 40.0)] {
        for _ in 0..4 {
            let len = r.gen_range(4..=12);
            let a = random_contour(&mut r, len);
            let b = related_contour(&mut r, &a);
            let m: Vec<f64> = (0..len).map(|_| r.gen_range(-2.0..2.0)).collect();
            let c = config(kernel);
            let g = energy_gradient(&Momenta::new(m.clone()).unwrap(), &a, &b, &c).unwrap();
            let fd = finite_difference(
                |x| energy(&Momenta::new(x.to_vec()).unwrap(), &a, &b, &c).unwrap(),
                &m,
                1e-4,
            );
            let rel = max_abs_diff(&g, &fd) / norm_inf(&fd);
            assert!(rel <= 1e-5, "{:?}: relative error {rel}", kernel.mode);
        }
    }
}

#[test]
fn gram_matrices_are_positive_definite() {
    let mut r = rng(4);
    for kernel in [KernelSpec::default(), KernelSpec::time_value(8.0, 50.0)] {
        let p = random_contour(&mut r, 48);
        let t: Vec<f64> = (0..48).map(|i| i as f64).collect();
        let g = gram_matrix(&t, p.values(), &kernel).unwrap();
        assert!(g.is_symmetric());
        let m = DMatrix::from_fn(48, 48, |i, j| g.get(i, j));
        let min = SymmetricEigen::new(m).eigenvalues.min();
        assert!(min > 0.0, "{:?}: min eigenvalue {min}", kernel.mode);
    }
}

#[test]
fn time_value_geodesics_conserve_the_hamiltonian() {
    let mut r = rng(5);
    let kernel = KernelSpec::time_value(4.0, 50.0);
    for _ in 0..5 {
        let a = random_contour(&mut r, 16);
        let b = related_contour(&mut r, &a);
        let fit = register(&a, &b, &config(kernel)).unwrap();
        let path = shoot(&a, &fit.momenta, &kernel, 20).unwrap();
        assert!(path.relative_hamiltonian_drift() <= 1e-6, "{}", path.relative_hamiltonian_drift());
    }
}

#[test]
fn reversing_both_contours_reverses_the_momenta() {
    let mut r = rng(6);
    let a = random_contour(&mut r, 64);
    let b = related_contour(&mut r, &a);
    let c = RegistrationConfig::default();
    let forward = solve_momenta_closed_form(&a, &b, &c.kernel, c.lambda).unwrap();
    let backward = solve_momenta_closed_form(&a.reversed(), &b.reversed(), &c.kernel, c.lambda).unwrap();
    let mut flipped = backward.values().to_vec();
    flipped.reverse();
    assert!(max_abs_diff(forward.values(), &flipped) <= 1e-9 * norm_inf(forward.values()));
}

fn small_corpus(dir: &std::path::Path) -> CorpusManifest {
    let spec = SyntheticEmotionSpec {
        max_frames: 160,
        ..SyntheticEmotionSpec::for_emotions(&[Emotion::Angry, Emotion::Sad], 11)
    };
    generate_synthetic_corpus(&spec, 6, dir).unwrap()
}

#[test]
fn batch_output_is_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_corpus(&dir.path().join("corpus"));
    let options = BatchOptions { split: None };
    let mut hashes = Vec::new();
    for threads in [1, 3] {
        let out = dir.path().join(format!("momenta{threads}"));
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let report = pool
            .install(|| batch_generate_momenta(&manifest, &RegistrationConfig::default(), &out, options))
            .unwrap();
        assert_eq!(report.failures(), 0);
        assert_eq!(report.pairs.len(), manifest.pairs.len());
        std::fs::write(out.join("report.csv"), report.to_csv()).unwrap();
        hashes.push(tree_hashes(&out));
    }
    assert_eq!(hashes[0], hashes[1]);
}

#[test]
fn empty_manifest_gives_an_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = CorpusManifest::new(dir.path(), Vec::new());
    let report = batch_generate_momenta(&manifest, &RegistrationConfig::default(), dir.path().join("m"), BatchOptions::default())
        .unwrap();
    assert!(report.pairs.is_empty());
    assert_eq!(report.failures(), 0);
    assert_eq!(report.to_csv().lines().count(), 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn energy_is_nonnegative_and_zero_only_at_identity(seed in 0u64..1000, len in 4usize..24) {
        let mut r = rng(seed);
        let a = random_contour(&mut r, len);
        let b = related_contour(&mut r, &a);
        let c = RegistrationConfig::default();
        let zero = Momenta::zeros(len);
        prop_assert_eq!(energy(&zero, &a, &a, &c).unwrap(), 0.0);
        let m: Vec<f64> = (0..len).map(|_| r.gen_range(-1.0..1.0)).collect();
        prop_assert!(energy(&Momenta::new(m).unwrap(), &a, &b, &c).unwrap() >= 0.0);
    }

    #[test]
    fn energy_trace_never_increases(seed in 0u64..1000, len in 8usize..48) {
        let mut r = rng(seed);
        let a = random_contour(&mut r, len);
        let b = related_contour(&mut r, &a);
        let out = register(&a, &b, &RegistrationConfig::default()).unwrap();
        prop_assert!(out.energy_trace.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(out.converged);
    }

    #[test]
    fn kernel_mode_does_not_change_zero_momenta_flow(seed in 0u64..1000, len in 2usize..20) {
        let mut r = rng(seed);
        let a = random_contour(&mut r, len);
        for kernel in [KernelSpec::default(), KernelSpec::time_value(5.0, 30.0)] {
            let path = shoot(&a, &Momenta::zeros(len), &kernel, 5).unwrap();
            prop_assert_eq!(path.endpoint(), a.values());
            prop_assert!(matches!(kernel.mode, KernelMode::TimeOnly | KernelMode::TimeValue));
        }
    }
}
