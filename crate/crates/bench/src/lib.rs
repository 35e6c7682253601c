//! Shared fixtures for the benchmarks.

use ctrecon::CrossTemporalStructure;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Two-level hierarchy with `n_b` bottom series under one total.
pub fn star_structure(n_b: usize, m: usize) -> CrossTemporalStructure {
    CrossTemporalStructure::from_parts(DMatrix::from_element(1, n_b, 1.0), m).expect("valid structure")
}

/// `rows` x `cols` standard normal matrix from a fixed seed.
pub fn normal_rows(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}
