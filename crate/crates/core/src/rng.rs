//! Seeded random streams.
//!
//! Every random decision in the crate is drawn from a stream derived from one
//! master seed plus a path of integer labels (image index, operator index,
//! purpose). Streams for different paths are independent, so work can be split
//! across threads without changing any output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A node in the seed derivation tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedStream {
    key: u64,
}

impl SeedStream {
    pub fn new(master_seed: u64) -> Self {
        Self { key: mix(master_seed) }
    }

    /// Child stream for `label`.
    pub fn child(&self, label: u64) -> Self {
        Self {
            key: mix(self.key ^ mix(label.wrapping_add(0x5851_F42D_4C95_7F2D))),
        }
    }

    pub fn path(&self, labels: &[u64]) -> Self {
        labels.iter().fold(*self, |s, &l| s.child(l))
    }

    pub fn rng(&self) -> StreamRng {
        ChaCha8Rng::seed_from_u64(self.key)
    }
}
