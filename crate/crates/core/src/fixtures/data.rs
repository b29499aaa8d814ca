//! Synthetic datasets: Gaussian blobs and 8x8 line shapes.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rand_xoshiro::Xoshiro256StarStar;

use crate::error::Result;
use crate::model::Dataset;
use crate::tensor::Tensor;

pub const BLOB_CLASSES: usize = 4;
pub const BLOB_FEATURES: usize = 16;
/// Standard deviation of class centres around the origin.
pub const BLOB_CENTER_SPREAD: f64 = 1.0;
/// Standard deviation of samples around their class centre.
pub const BLOB_NOISE: f64 = 1.2;

pub const SHAPE_SIDE: usize = 8;
pub const SHAPE_NOISE: f64 = 0.15;
pub const SHAPE_CLASSES: [&str; 4] = ["horizontal_bar", "vertical_bar", "diagonal", "blank"];

/// Balanced, shuffled samples: `per_class` of each label.
fn balanced_labels(rng: &mut Xoshiro256StarStar, classes: usize, per_class: usize) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..classes).flat_map(|c| std::iter::repeat_n(c, per_class)).collect();
    labels.shuffle(rng);
    labels
}

pub fn blob_centers(rng: &mut Xoshiro256StarStar) -> Vec<Vec<f32>> {
    let dist = Normal::new(0.0, BLOB_CENTER_SPREAD).expect("valid normal");
    (0..BLOB_CLASSES)
        .map(|_| (0..BLOB_FEATURES).map(|_| dist.sample(rng) as f32).collect())
        .collect()
}

pub fn blobs(name: &str, centers: &[Vec<f32>], per_class: usize, rng: &mut Xoshiro256StarStar) -> Result<Dataset> {
    let labels = balanced_labels(rng, centers.len(), per_class);
    let noise = Normal::new(0.0, BLOB_NOISE).expect("valid normal");
    let mut data = Vec::with_capacity(labels.len() * BLOB_FEATURES);
    for &label in &labels {
        data.extend(centers[label].iter().map(|&c| c + noise.sample(rng) as f32));
    }
    Dataset::new(
        name,
        Tensor::new(vec![labels.len(), BLOB_FEATURES], data)?,
        labels,
        (0..centers.len()).map(|c| format!("blob_{c}")).collect(),
    )
}

/// One 8x8 image of class `label` with additive Gaussian pixel noise.
pub fn shape_image(label: usize, rng: &mut Xoshiro256StarStar) -> Vec<f32> {
    let n = SHAPE_SIDE;
    let mut img = vec![0.0f32; n * n];
    let intensity = rng.random_range(0.8f32..1.2);
    match label {
        0 | 1 => {
            let line = rng.random_range(1..n - 1);
            let len = rng.random_range(5..=n);
            let start = rng.random_range(0..=n - len);
            for k in start..start + len {
                let (r, c) = if label == 0 { (line, k) } else { (k, line) };
                img[r * n + c] = intensity;
            }
        }
        2 => {
            let offset = rng.random_range(-2i32..=2);
            for r in 0..n as i32 {
                let c = r + offset;
                if (0..n as i32).contains(&c) {
                    img[r as usize * n + c as usize] = intensity;
                }
            }
        }
        _ => {}
    }
    for px in img.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *px += (z * SHAPE_NOISE) as f32;
    }
    img
}

pub fn shapes(name: &str, per_class: usize, rng: &mut Xoshiro256StarStar) -> Result<Dataset> {
    let labels = balanced_labels(rng, SHAPE_CLASSES.len(), per_class);
    let mut data = Vec::with_capacity(labels.len() * SHAPE_SIDE * SHAPE_SIDE);
    for &label in &labels {
        data.extend(shape_image(label, rng));
    }
    Dataset::new(
        name,
        Tensor::new(vec![labels.len(), 1, SHAPE_SIDE, SHAPE_SIDE], data)?,
        labels,
        SHAPE_CLASSES.iter().map(|s| s.to_string()).collect(),
    )
}
