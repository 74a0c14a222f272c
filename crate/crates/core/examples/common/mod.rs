//! Shared settings for the examples: a small MNIST 0-5 experiment that
//! trains in about a minute on one CPU.

#![allow(dead_code)]

use std::str::FromStr;

use openset_kd::cli::ExperimentConfig;

/// Positional argument `i` (1-based), or `default` when absent.
pub fn arg<T: FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|a| a.parse().ok()).unwrap_or(default)
}

/// Digits 0-5 known, 6-9 unknown, with per-class caps and narrow networks.
///
/// Reads MNIST from `$OPENSET_DATA` (default `data`).
pub fn quick_config(out_dir: &str) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.data_root = std::env::var("OPENSET_DATA").unwrap_or_else(|_| "data".into()).into();
    c.known_classes = vec![0, 1, 2, 3, 4, 5];
    c.backbone = "plain-small".into();
    c.max_train_per_class = 300;
    c.max_test_per_class = 150;
    c.batch_size = 32;
    c.teacher_epochs = 2;
    c.train_steps = 150;
    c.generator_width = 16;
    c.discriminator_width = 16;
    c.out_dir = out_dir.into();
    c
}
