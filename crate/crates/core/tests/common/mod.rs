#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pdsm::model::ToyClassifier;
use pdsm::{rng, Matrix};
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn random_input(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = rng::stream(seed, "fd-input", 0);
    Matrix::from_fn(rows, cols, |_, _| r.random_range(0.0..2.0))
}

/// Max over cells of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8),
/// numeric being the central difference with step [`FD_STEP`].
pub fn max_relative_error(model: &ToyClassifier, x: &Matrix, class: usize) -> f64 {
    let g = model.input_gradient(x, class).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..x.as_slice().len() {
        let mut plus = x.clone();
        plus.as_mut_slice()[i] += FD_STEP;
        let mut minus = x.clone();
        minus.as_mut_slice()[i] -= FD_STEP;
        let num = (model.forward(&plus).unwrap()[class] - model.forward(&minus).unwrap()[class])
            / (2.0 * FD_STEP);
        let ana = g.as_slice()[i];
        let denom = ana.abs().max(num.abs()).max(1e-8);
        worst = worst.max((ana - num).abs() / denom);
    }
    worst
}

/// Worst error over 10 random models x 10 inputs.
pub fn gradient_check_suite() -> f64 {
    let mut worst: f64 = 0.0;
    for m in 0..10u64 {
        let model = ToyClassifier::random(1000 + m);
        for i in 0..10u64 {
            let x = random_input(8 + (i as usize % 3), 12 + (m as usize % 4), m * 100 + i);
            worst = worst.max(max_relative_error(&model, &x, 1));
        }
    }
    worst
}

/// Relative path -> file bytes for every file below `root`.
pub fn tree_bytes(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

pub fn pdsm_cmd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdsm"))
        .args(args)
        .env_remove("PDSM_SEED")
        .output()
        .expect("binary runs")
}

/// Runs the CLI and panics with its stderr on failure.
pub fn pdsm_ok(args: &[&str]) -> Output {
    let out = pdsm_cmd(args);
    assert!(
        out.status.success(),
        "pdsm {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Small end-to-end pipeline under `root`; returns the output directories
/// in pipeline order.
pub fn run_pipeline(root: &Path, seed: &str) -> Vec<PathBuf> {
    let p = |name: &str| root.join(name);
    let s = |path: PathBuf| path.to_str().unwrap().to_string();
    let (data, model, maps) = (s(p("data")), s(p("model")), s(p("maps")));
    let model_dir = s(p("model").join("model"));
    pdsm_ok(&[
        "--seed",
        seed,
        "--out-dir",
        &data,
        "gen-synth",
        "fakephoneme",
        "--n-train",
        "24",
        "--n-test",
        "8",
    ]);
    pdsm_ok(&[
        "--seed",
        seed,
        "--out-dir",
        &model,
        "train",
        "--data",
        &data,
        "--epochs",
        "2",
    ]);
    pdsm_ok(&[
        "--seed",
        seed,
        "--out-dir",
        &maps,
        "attribute",
        "--model",
        &model_dir,
        "--data",
        &data,
        "--ig-steps",
        "8",
        "--gradshap-samples",
        "4",
        "--limit",
        "3",
    ]);
    let manifest =
        pdsm::interchange::DatasetManifest::load(p("data").join("manifest.json")).unwrap();
    let entry = manifest
        .manifest
        .entries
        .iter()
        .find(|e| e.sample_id == "test-00012-fake")
        .unwrap();
    let map = s(p("maps").join("ig").join("test-00012-fake.npy"));
    let ppg = s(p("data").join(entry.posteriorgram.as_ref().unwrap()));
    let spec = s(p("data").join(&entry.spectrogram));
    let man = s(p("data").join("manifest.json"));
    pdsm_ok(&[
        "--seed",
        seed,
        "--out-dir",
        &s(p("disc")),
        "discretize",
        "--map",
        &map,
        "--ppg",
        &ppg,
        "--manifest",
        &man,
        "--k",
        "2",
    ]);
    let mask = s(p("disc").join("mask.npy"));
    pdsm_ok(&[
        "--seed",
        seed,
        "--out-dir",
        &s(p("eval")),
        "evaluate",
        "--model",
        &model_dir,
        "--input",
        &spec,
        "--mask",
        &mask,
    ]);
    pdsm_ok(&[
        "--seed",
        seed,
        "--out-dir",
        &s(p("sweep")),
        "sweep-k",
        "--model",
        &model_dir,
        "--data",
        &data,
        "--maps",
        &maps,
        "--k-max",
        "4",
        "--random-seeds",
        "2",
        "--limit",
        "3",
    ]);
    pdsm_ok(&[
        "--seed",
        seed,
        "--out-dir",
        &s(p("importance")),
        "global-importance",
        "--data",
        &data,
        "--maps",
        &maps,
        "--method",
        "ig",
        "--limit",
        "3",
    ]);
    pdsm_ok(&[
        "--seed",
        seed,
        "--out-dir",
        &s(p("rank")),
        "rank",
        "--map",
        &map,
        "--ppg",
        &ppg,
        "--manifest",
        &man,
    ]);
    pdsm_ok(&[
        "--seed",
        seed,
        "--out-dir",
        &s(p("report")),
        "report",
        "--sweep",
        &s(p("sweep")),
    ]);
    [
        "data",
        "model",
        "maps",
        "disc",
        "eval",
        "sweep",
        "importance",
        "rank",
        "report",
    ]
    .iter()
    .map(|n| p(n))
    .collect()
}
