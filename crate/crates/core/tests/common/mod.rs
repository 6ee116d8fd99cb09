#![allow(dead_code)]

use std::sync::Arc;

use protoadapt_core::episodes::{EpisodeSampler, ImageLoader, ImageTarget, TaskShape};
use protoadapt_core::synthetic::gaussian_clusters;
use protoadapt_core::EncoderConfig;
use protoadapt_tensor::NdArray;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two blocks of width 8 on 1x8x8 inputs, D = 32.
pub fn small_config() -> EncoderConfig {
    EncoderConfig::new(1, (8, 8)).with_hidden_channels(8).with_num_blocks(2)
}

/// Episodes over in-memory Gaussian clusters shaped for [`small_config`].
pub fn cluster_sampler(classes: usize, shape: TaskShape, sigma: f64, seed: u64, stream: u64) -> EpisodeSampler {
    let index = gaussian_clusters(classes, shape.shot + shape.query + 2, [1, 8, 8], sigma, seed).unwrap();
    EpisodeSampler {
        split: Arc::new(index),
        loader: Arc::new(ImageLoader::new(ImageTarget::Omniglot28, false)),
        shape,
        master_seed: seed,
        stream,
    }
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> NdArray<f32> {
    let n = shape.iter().product();
    NdArray::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Labels `0..way` repeated `shot` times, then shuffled.
pub fn shuffled_labels(rng: &mut ChaCha8Rng, way: usize, shot: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut labels: Vec<usize> = (0..way * shot).map(|i| i % way).collect();
    labels.shuffle(rng);
    labels
}
