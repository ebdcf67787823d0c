//! Inputs shared by the benchmarks.

use dada_core::data::{synth_generate, FeatureDataset, SynthSpec};
use dada_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

pub fn unit_rows(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut t = random_matrix(rows, cols, seed);
    for i in 0..rows {
        let r = t.row_mut(i);
        let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        r.iter_mut().for_each(|x| *x /= n);
    }
    t
}

/// The synth-default dataset shape: 8 classes, 32 features, 100 rows each.
pub fn synth_default() -> FeatureDataset {
    synth_generate(&SynthSpec {
        num_classes: 8,
        dim: 32,
        samples_per_class: 100,
        center_scale: 4.0,
        noise_sigma: 0.9,
        seed: 0,
    })
    .expect("valid spec")
}
