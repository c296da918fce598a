#![allow(dead_code)]

use dmlbench_core::{Batch, SamplerRng};
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn gaussian(rng: &mut SamplerRng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, d), || rng.sample(StandardNormal))
}

/// `classes x per_class` rows, labels grouped, N(0, 1) entries.
pub fn random_batch(rng: &mut SamplerRng, classes: usize, per_class: usize, d: usize) -> Batch {
    let labels: Vec<usize> = (0..classes).flat_map(|c| std::iter::repeat_n(c, per_class)).collect();
    Batch::new(gaussian(rng, labels.len(), d), labels).unwrap()
}

/// Well separated clusters: centres N(0, spread^2), noise N(0, sigma^2).
pub fn clustered(rng: &mut SamplerRng, classes: usize, per_class: usize, d: usize, spread: f64, sigma: f64) -> Batch {
    let centres = gaussian(rng, classes, d) * spread;
    let labels: Vec<usize> = (0..classes).flat_map(|c| std::iter::repeat_n(c, per_class)).collect();
    let noise = gaussian(rng, labels.len(), d) * sigma;
    let x = Array2::from_shape_fn((labels.len(), d), |(i, j)| centres[[labels[i], j]] + noise[[i, j]]);
    Batch::new(x, labels).unwrap()
}
