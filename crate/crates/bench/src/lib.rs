//! Fixtures shared by the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sparsemo::harness::initial_network;
use sparsemo::{ExperimentConfig, ModelId, SparseNetwork, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, &mut rng(seed))
}

/// A masked network at `density` whose smoothed gradients are filled with
/// noise, so a cycle has something to rank.
pub fn sparse_network(model: ModelId, density: f64, seed: u64) -> SparseNetwork {
    let mut cfg = ExperimentConfig { model, ..ExperimentConfig::default() };
    cfg.sparsity.density = density;
    let mut net = initial_network(&cfg, seed).expect("valid benchmark config");
    let mut r = rng(seed ^ 0x5eed);
    for state in net.params_mut() {
        state.momentum = Tensor::uniform(state.weights.shape(), -1e-2, 1e-2, &mut r);
    }
    net
}

pub fn labels(n: usize) -> Vec<usize> {
    (0..n).map(|i| i % 10).collect()
}
