//! Named, reproducible random sub-streams derived from one root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    root: u64,
}

impl SeedStream {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    /// Seed for the sub-stream `name` at `indices`. Stable across runs and
    /// platforms.
    pub fn derive(&self, name: &str, indices: &[u64]) -> u64 {
        // FNV-1a over the name, then splitmix64 folding of each index
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in name.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        let mut state = splitmix64(self.root ^ h);
        for &i in indices {
            state = splitmix64(state ^ i.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        }
        state
    }

    pub fn rng(&self, name: &str, indices: &[u64]) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.derive(name, indices))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
