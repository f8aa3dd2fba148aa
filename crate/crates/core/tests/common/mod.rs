#![allow(dead_code)]

pub mod ops;
pub mod oracle;

use puda_core::model::{ModelConfig, ModelParams};
use puda_core::text::{LabelMatrix, PAD};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn toy_config(labels: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: 20,
        dim: 8,
        labels,
        max_len: 6,
    }
}

pub fn toy_model(labels: usize, seed: u64) -> ModelParams {
    ModelParams::init(toy_config(labels), seed).unwrap()
}

/// Random padded sequence with at least one real token.
pub fn tokens(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Vec<u32> {
    let real = rng.random_range(1..=cfg.max_len);
    (0..cfg.max_len)
        .map(|i| {
            if i < real {
                rng.random_range(2..cfg.vocab_size as u32)
            } else {
                PAD
            }
        })
        .collect()
}

/// Random observed matrix where every label has at least one positive and
/// one unlabeled row.
pub fn observed(rng: &mut ChaCha8Rng, rows: usize, labels: usize) -> LabelMatrix {
    assert!(rows >= 2);
    let mut m = LabelMatrix::zeros(rows, labels);
    for l in 0..labels {
        let pos = rng.random_range(0..rows);
        let neg = (pos + rng.random_range(1..rows)) % rows;
        m.set(pos, l, true);
        for i in 0..rows {
            if i != pos && i != neg && rng.random_bool(0.4) {
                m.set(i, l, true);
            }
        }
    }
    m
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
