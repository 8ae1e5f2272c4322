//! Shared inputs for the benchmarks.

use cfcon_core::synthgen::generate_dataset;
use cfcon_core::{Dataset, GenConfig, Tensor, WorldSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `rows x cols` matrix of uniform values in [-1, 1).
pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches data")
}

/// Default-world dataset with `num_qa` questions.
pub fn dataset(num_qa: usize) -> Dataset {
    generate_dataset(&WorldSpec::default(), &GenConfig { num_qa, ..GenConfig::default() }).expect("default world is valid")
}
