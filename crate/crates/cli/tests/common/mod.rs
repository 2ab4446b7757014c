#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use neuroinfo_cli::config::ExperimentConfig;

pub fn write_idx_images(path: &Path, images: &[Vec<u8>]) {
    let mut bytes = vec![0, 0, 8, 3];
    for d in [images.len() as u32, 28, 28] {
        bytes.extend(d.to_be_bytes());
    }
    for img in images {
        assert_eq!(img.len(), 784);
        bytes.extend(img);
    }
    fs::write(path, bytes).unwrap();
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) {
    let mut bytes = vec![0, 0, 8, 1];
    bytes.extend((labels.len() as u32).to_be_bytes());
    bytes.extend(labels);
    fs::write(path, bytes).unwrap();
}

/// Noisy images where class `c` lights up rows `2c..2c+3`: easy to learn
/// but not trivially separable by one pixel.
pub fn synthetic_images(n: usize, seed: u64) -> (Vec<Vec<u8>>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = (i % 10) as u8;
        let img: Vec<u8> = (0..784)
            .map(|p| {
                let row = p / 28;
                let lit = row >= 2 * c as usize + 4 && row < 2 * c as usize + 7;
                let base: u8 = rng.random_range(0..80);
                if lit && rng.random_bool(0.7) {
                    base.saturating_add(170)
                } else {
                    base
                }
            })
            .collect();
        images.push(img);
        labels.push(c);
    }
    (images, labels)
}

/// Writes a synthetic MNIST-format dataset into `dir/data`.
pub fn write_synthetic_mnist(dir: &Path, train: usize, test: usize) {
    let data = dir.join("data");
    fs::create_dir_all(&data).unwrap();
    let (x, y) = synthetic_images(train, 1);
    write_idx_images(&data.join("train-images-idx3-ubyte"), &x);
    write_idx_labels(&data.join("train-labels-idx1-ubyte"), &y);
    let (x, y) = synthetic_images(test, 2);
    write_idx_images(&data.join("t10k-images-idx3-ubyte"), &x);
    write_idx_labels(&data.join("t10k-labels-idx1-ubyte"), &y);
}

pub fn small_config_text(replicates: usize, hidden: &str, plans: &str) -> String {
    format!(
        r#"
output_dir = "out"
seed = 11
replicates = {replicates}
architecture = [784, {hidden}, 10]
activation = "relu"

[dataset]
kind = "mnist"
train_images = "data/train-images-idx3-ubyte"
train_labels = "data/train-labels-idx1-ubyte"
test_images = "data/t10k-images-idx3-ubyte"
test_labels = "data/t10k-labels-idx1-ubyte"

[training]
max_epochs = 3
patience = 2

[training.regularizer]
kind = "l2"
weight_decay = 1e-4
{plans}
"#
    )
}

pub const SMALL_PLANS: &str = r#"
[[plans]]
scope = "whole_network"
measures = ["mi", "random"]
directions = ["lowest_first"]
step = 4

[[plans]]
scope = { layer = 1 }
measures = ["mi", "kl_selectivity", "js", "random"]

[[plans]]
scope = { layer = 2 }
measures = ["entropy"]
strategy = "to_mean"
"#;

/// Writes `config.toml` next to a synthetic dataset and loads it.
pub fn small_experiment(dir: &Path, replicates: usize, hidden: &str, plans: &str) -> (PathBuf, ExperimentConfig) {
    write_synthetic_mnist(dir, 400, 150);
    let path = dir.join("config.toml");
    fs::write(&path, small_config_text(replicates, hidden, plans)).unwrap();
    let cfg = ExperimentConfig::load(&path).unwrap();
    (path, cfg)
}

/// Every CSV under `root`, as (relative path, bytes), sorted by path.
pub fn collect_csvs(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "csv") {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

pub fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(str::to_string).collect())
        .collect();
    (header, rows)
}
