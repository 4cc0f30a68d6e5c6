//! Counter-based random streams.
//!
//! Every random draw made by the library is taken from a ChaCha8 stream that is
//! addressed by `(root seed, replicate, t, i, purpose)`. Two draws with the same
//! address always see the same numbers, no matter which thread performs them or
//! in which order, so results do not depend on the degree of parallelism.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TIME_BITS: u32 = 24;
const INDEX_BITS: u32 = 37;

/// What a stream is used for. Distinct purposes never share numbers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Init = 0,
    Ancestor = 1,
    Kernel = 2,
    Graph = 3,
    Observation = 4,
    Aux = 5,
}

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Combines a list of words into one well-mixed 64-bit key.
pub fn hash_words(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x6a09_e667_f3bc_c908, |acc, &w| mix64(acc ^ mix64(w)))
}

/// Stream family for one replicate of one experiment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamKey {
    root: u64,
    replicate: u64,
    seed: [u8; 32],
}

impl StreamKey {
    pub fn new(root: u64, replicate: u64) -> Self {
        let mut seed = [0u8; 32];
        let mut state = hash_words(&[root, replicate]);
        for chunk in seed.chunks_exact_mut(8) {
            state = mix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        StreamKey {
            root,
            replicate,
            seed,
        }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn replicate(&self) -> u64 {
        self.replicate
    }

    /// The generator addressed by `(t, i, purpose)` within this replicate.
    pub fn rng(&self, t: usize, i: usize, purpose: Purpose) -> ChaCha8Rng {
        debug_assert!((t as u64) < (1 << TIME_BITS), "time index too large");
        debug_assert!((i as u64) < (1 << INDEX_BITS), "particle index too large");
        let stream = ((purpose as u64) << (TIME_BITS + INDEX_BITS))
            | ((t as u64) << INDEX_BITS)
            | i as u64;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(stream);
        rng
    }
}
