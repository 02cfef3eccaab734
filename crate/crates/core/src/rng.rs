//! Splittable random streams.
//!
//! Every random quantity is addressed by a path of integer tags hashed into
//! a ChaCha key, so a draw depends only on its address and never on the
//! order in which threads happen to request it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Tags for the top-level sub-streams. Kept distinct so the normal part and
/// the first-stage part of a draw never share randomness.
pub mod tag {
    pub const ZETA: u64 = 0x5a45_5441;
    pub const EDRAW: u64 = 0x4544_5257;
    pub const DATA: u64 = 0x4441_5441;
    pub const REPLICATION: u64 = 0x5245_504c;
    pub const STAR: u64 = 0x5354_4152;
    pub const RUN: u64 = 0x5255_4e00;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Stream(u64);

impl Stream {
    pub fn new(seed: u64) -> Self {
        Stream(splitmix64(seed ^ 0x7477_6f73_7461_6765))
    }

    pub fn child(self, tag: u64) -> Self {
        Stream(splitmix64(self.0 ^ splitmix64(tag.wrapping_add(0x632b_e59b_d9b4_e019))))
    }

    pub fn path(self, tags: &[u64]) -> Self {
        tags.iter().fold(self, |s, &t| s.child(t))
    }

    pub fn rng(self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let mut state = self.0;
        for chunk in key.chunks_exact_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }

    /// Raw 64-bit identity, useful for hashing a stream into a seed elsewhere.
    pub fn id(self) -> u64 {
        self.0
    }
}

impl From<u64> for Stream {
    fn from(seed: u64) -> Self {
        Stream::new(seed)
    }
}
