//! Deterministic, splittable random-number streams.
//!
//! All randomness in the crate flows from a single master seed. Stages
//! (simulation, τ draws, minibatch shuffles, posterior sampling, …)
//! pull independent streams keyed by a string tag plus an index, so:
//!
//! * the same `(master, tag, index)` always yields the same stream,
//!   regardless of what other streams were drawn before it — there is
//!   no hidden global state to perturb;
//! * work can shard across workers (one stream per shard) with output
//!   identical to the single-worker run.
//!
//! Stream keys are derived counter-style: the master seed is combined
//! with an FNV-1a hash of the tag and the index, then expanded through
//! SplitMix64 into a 256-bit ChaCha12 key. SplitMix64 is the standard
//! seed-expansion PRNG (Steele, Lea & Flood 2014); ChaCha12 is the
//! crate-recommended deterministic generator.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// A node in the seed-derivation tree. Cheap to copy; derive as many
/// streams or children as needed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    master: u64,
}

/// One step of SplitMix64: advances the state and returns a mixed
/// output word.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the tag bytes; fixed offset basis and prime, so the
/// mapping from tag to key is stable across builds and platforms.
fn fnv1a(tag: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

impl SeedTree {
    /// Root of the tree for a master seed.
    pub fn new(master: u64) -> Self {
        SeedTree { master }
    }

    /// The raw 64-bit key for `(tag, index)` under this node.
    fn key(&self, tag: &str, index: u64) -> u64 {
        let mut state = self
            .master
            .wrapping_add(fnv1a(tag))
            .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        splitmix64(&mut state)
    }

    /// A child node, for handing a whole stage its own seed space.
    pub fn child(&self, tag: &str) -> SeedTree {
        SeedTree {
            master: self.key(tag, 0),
        }
    }

    /// The derived 64-bit seed for `(tag, index)`, for handing to an
    /// API that takes a seed rather than a stream.
    pub fn leaf(&self, tag: &str, index: u64) -> u64 {
        self.key(tag, index)
    }

    /// An independent ChaCha12 stream for `(tag, index)`.
    pub fn stream(&self, tag: &str, index: u64) -> ChaCha12Rng {
        let mut state = self.key(tag, index);
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        ChaCha12Rng::from_seed(seed)
    }
}
