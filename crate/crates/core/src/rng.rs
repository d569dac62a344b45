//! Deterministic seed layout.
//!
//! Every random draw in the crate comes from a [`SeedTree`] node. A node is a
//! 64-bit seed; children are derived by mixing the parent seed with a numeric
//! or textual tag, so the stream used by (say) the shape observation `j` of
//! coefficient `k`, mode `l` does not depend on how many draws other
//! consumers made or on the order in which parallel tasks ran.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedTree(u64);

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        SeedTree(seed)
    }

    pub fn seed(&self) -> u64 {
        self.0
    }

    pub fn child(&self, tag: u64) -> SeedTree {
        SeedTree(splitmix64(self.0 ^ splitmix64(tag)))
    }

    pub fn named(&self, label: &str) -> SeedTree {
        self.child(fnv1a(label))
    }

    pub fn rng(&self) -> StreamRng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}
