use std::f64::consts::PI;
use std::path::Path;

use hynd_core::backbone::Dataset;
use hynd_core::{Error, Result, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_CLASSES: usize = 10;
const PIXELS: usize = CIFAR_SIDE * CIFAR_SIDE * 3;
const RECORD: usize = PIXELS + 1;

/// Parses CIFAR-10 binary records (a label byte, then the red, green and
/// blue planes in row-major order) into `(N, 32, 32, 3)` images in `[0, 1]`.
pub fn parse_cifar(bytes: &[u8], limit: Option<usize>) -> Result<Dataset> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(RECORD) {
        return Err(Error::InvalidArgument(format!(
            "CIFAR data length {} is not a positive multiple of {RECORD}",
            bytes.len()
        )));
    }
    let count = (bytes.len() / RECORD).min(limit.unwrap_or(usize::MAX));
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let mut labels = Vec::with_capacity(count);
    let mut data = Vec::with_capacity(count * PIXELS);
    for record in bytes.chunks_exact(RECORD).take(count) {
        labels.push(record[0] as usize);
        let px = &record[1..];
        for p in 0..plane {
            for c in 0..3 {
                data.push(px[c * plane + p] as f64 / 255.0);
            }
        }
    }
    let images = Tensor::from_vec(vec![count, CIFAR_SIDE, CIFAR_SIDE, 3], data)?;
    Dataset::with_classes(images, labels, CIFAR_CLASSES)
}

pub fn load_cifar(path: &Path, limit: Option<usize>) -> Result<Dataset> {
    parse_cifar(&std::fs::read(path)?, limit)
}

/// Oriented stripe images; the label is the orientation bucket.
///
/// Labels cycle through the classes and are then shuffled, so every class
/// receives `count / classes` images up to one.
pub fn synth_dataset(seed: u64, count: usize, classes: usize) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    if count == 0 {
        return Err(Error::Empty("synthetic dataset"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..count).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let side = CIFAR_SIDE;
    let mut data = Vec::with_capacity(count * PIXELS);
    for &label in &labels {
        let theta = (label as f64 + rng.random_range(0.15..0.85)) * PI / classes as f64;
        let period = rng.random_range(4.0..8.0);
        let phase = rng.random_range(0.0..2.0 * PI);
        let fg: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.55..1.0));
        let bg: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..0.45));
        let (s, c) = theta.sin_cos();
        for y in 0..side {
            for x in 0..side {
                let t = (x as f64 * c + y as f64 * s) * 2.0 * PI / period + phase;
                let v = 0.5 + 0.5 * t.sin();
                for ch in 0..3 {
                    let noise = rng.random_range(-0.05..0.05);
                    data.push((v * fg[ch] + (1.0 - v) * bg[ch] + noise).clamp(0.0, 1.0));
                }
            }
        }
    }
    let images = Tensor::from_vec(vec![count, side, side, 3], data)?;
    Dataset::with_classes(images, labels, classes)
}
