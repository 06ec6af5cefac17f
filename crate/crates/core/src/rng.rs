//! Seeded randomness for diagnostics and coefficient generation.
//!
//! Every random quantity in the crate is drawn from [`SeededRng`] (ChaCha8
//! seeded from a `u64`) so results are reproducible from the recorded seed.

use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

pub type SeededRng = rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    SeededRng::seed_from_u64(seed)
}

/// Vector with independent standard complex Gaussian entries.
pub fn complex_gaussian(rng: &mut SeededRng, n: usize) -> Vec<C64> {
    (0..n)
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            C64::new(re, im)
        })
        .collect()
}

pub fn real_gaussian(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}
