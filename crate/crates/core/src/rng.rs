//! Deterministic RNG substreams.
//!
//! All randomness in a run flows from a single user seed. Independent
//! consumers (mask generation, chain init, per-coil noise, training) derive
//! their own stream from `(seed, name)` so that varying one source leaves
//! the others bit-identical.

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::grid::ComplexGrid;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive a named substream from the run seed.
pub fn substream(seed: u64, name: &str) -> ChaCha12Rng {
    let mut state = seed ^ fnv1a64(name.as_bytes());
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}

/// Grid of complex noise with i.i.d. standard-normal real and imaginary
/// parts (so each complex entry has E|z|^2 = 2; the schedule sigmas are
/// per-real-component standard deviations).
pub fn noise_grid<R: Rng>(rng: &mut R, height: usize, width: usize) -> ComplexGrid {
    let data = Array2::from_shape_simple_fn((height, width), || {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im)
    });
    ComplexGrid::from_array(data)
}

/// Real grid of i.i.d. standard normals.
pub fn real_noise_grid<R: Rng>(rng: &mut R, height: usize, width: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((height, width), || rng.sample(StandardNormal))
}
