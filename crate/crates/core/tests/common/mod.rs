#![allow(dead_code)]

use linescope_core::data::{synth_blobs, BatchPlan, Dataset};
use linescope_core::nncore::{Activation, ModelSpec};
use linescope_core::trainer::TrainConfig;

pub fn blobs(n: usize, classes: usize, dim: usize, seed: u64) -> Dataset {
    synth_blobs(n, classes, dim, 1.0, seed).unwrap()
}

pub fn mlp_config(dim: usize, classes: usize, steps: usize, lr: f64, momentum: f64) -> TrainConfig {
    TrainConfig {
        learning_rate: lr,
        momentum,
        steps,
        batch: BatchPlan {
            batch_size: 16,
            shuffle_seed: 3,
        },
        model: ModelSpec::mlp(vec![dim, 12, classes], Activation::Tanh, 9),
        master_seed: 1,
        snapshot_stride: 5,
        eval_stride: 10,
        direction_stride: 1,
    }
}

pub fn quadratic_config(dim: usize, centered: bool, steps: usize, lr: f64, batch_size: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: lr,
        momentum: 0.0,
        steps,
        batch: BatchPlan {
            batch_size,
            shuffle_seed: 5,
        },
        model: ModelSpec::quadratic(dim, centered, 21),
        master_seed: 2,
        snapshot_stride: 1,
        eval_stride: 1,
        direction_stride: 1,
    }
}
