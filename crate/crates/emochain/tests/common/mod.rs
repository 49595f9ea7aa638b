#![allow(dead_code)]

use std::fs;
use std::path::Path;

use emochain::features::F0Contour;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Smooth voiced contour: a base pitch plus three random sinusoids.
pub fn random_contour(rng: &mut impl Rng, len: usize) -> F0Contour {
    let base = rng.gen_range(110.0..240.0);
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(2.0..20.0),
                rng.gen_range(0.02..0.25),
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let values = (0..len)
        .map(|t| base + waves.iter().map(|(a, f, p)| a * (f * t as f64 + p).sin()).sum::<f64>())
        .collect();
    F0Contour::voiced(values).unwrap()
}

/// Target derived from `a` the way emotional contours differ from neutral
/// ones: raised, tilted and perturbed.
pub fn related_contour(rng: &mut impl Rng, a: &F0Contour) -> F0Contour {
    let scale = rng.gen_range(0.9..1.2);
    let shift = rng.gen_range(-20.0..30.0);
    let tilt = rng.gen_range(-0.2..0.2);
    let wiggle = random_contour(rng, a.len());
    let values = a
        .values()
        .iter()
        .zip(wiggle.values())
        .enumerate()
        .map(|(t, (v, w))| scale * v + shift + tilt * t as f64 + 0.1 * (w - wiggle.values()[0]))
        .collect();
    F0Contour::voiced(values).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// SHA-256 of every file under `dir`, keyed by relative path, sorted.
pub fn tree_hashes(dir: &Path) -> Vec<(String, String)> {
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, String)>) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            walk(root, &path, out);
        } else {
            let digest = Sha256::digest(fs::read(&path).unwrap());
            let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
            out.push((path.strip_prefix(root).unwrap().display().to_string(), hex));
        }
    }
}
