use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Matrix;

/// Seed for every random stream in the crate.
///
/// Streams come from ChaCha8, whose output is specified independently of
/// platform and word size, so a seed reproduces bit-identical samples
/// everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Independent stream derived from this seed for a named purpose.
    pub fn derive(self, stream: u64) -> RngSeed {
        // SplitMix64 finalizer.
        let mut z = self.0 ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RngSeed(z ^ (z >> 31))
    }

    pub fn next(self) -> RngSeed {
        RngSeed(self.0.wrapping_add(1))
    }
}

impl From<u64> for RngSeed {
    fn from(v: u64) -> Self {
        RngSeed(v)
    }
}

/// `rows x cols` matrix of i.i.d. standard normal entries.
pub fn sample_gaussian(rows: usize, cols: usize, seed: RngSeed) -> Matrix {
    let mut rng = seed.rng();
    fill_gaussian(rows, cols, &mut rng)
}

pub(crate) fn fill_gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Matrix::from_vec_unchecked(rows, cols, data)
}
