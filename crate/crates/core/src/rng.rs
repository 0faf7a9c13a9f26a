//! Seeded randomness. Every random draw in the crate goes through
//! [`SeededRng`] (ChaCha8), so a seed fully determines a run on every
//! platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::Mat;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent sub-stream seed, e.g. one per layer or per role.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Matrix with iid standard normal entries, filled column by column.
pub fn gaussian(rows: usize, cols: usize, rng: &mut SeededRng) -> Mat {
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    Mat::from_vec(rows, cols, data)
}

/// Random `rows × cols` matrix with orthonormal columns (Gaussian + QR).
pub fn orthonormal(rows: usize, cols: usize, rng: &mut SeededRng) -> Mat {
    let g = gaussian(rows, cols, rng);
    crate::factor::orth(&g, rng).q
}
