//! Seeded random matrix generators shared by the test suites of this crate
//! and its downstream consumers. Not part of the modeling API.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Real;

/// Deterministic generator for tests.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random symmetric matrix with entries of order one.
pub fn random_symmetric<T: Real>(n: usize, rng: &mut impl Rng) -> DMatrix<T> {
    let m = DMatrix::from_fn(n, n, |_, _| T::of(rng.random_range(-1.0..1.0)));
    crate::linalg::symmetrize(&m)
}

/// Random well-conditioned SPD matrix: `MMᵀ + n·I` scaled back to entries of
/// order one.
pub fn random_spd<T: Real>(n: usize, rng: &mut impl Rng) -> DMatrix<T> {
    let m = DMatrix::from_fn(n, n, |_, _| T::of(rng.random_range(-1.0..1.0)));
    let mut spd = &m * m.transpose();
    for i in 0..n {
        spd[(i, i)] += T::one();
    }
    spd
}
