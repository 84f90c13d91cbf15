//! Seed derivation.
//!
//! Every stochastic step draws from its own ChaCha8 stream. A stream is
//! identified by the master seed, a [`Stream`] purpose tag and an index
//! (replicate number, subset rank, fold...). The three are mixed with
//! SplitMix64 into a 64-bit seed:
//!
//! ```text
//! seed = mix(mix(master) ^ mix(PURPOSE_TAG) ^ mix(index + 1))
//! ```
//!
//! No stream depends on scheduling, so results for a given master seed are
//! identical at any worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags for derived streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    SubsetSampling,
    Folds,
    TestSplit,
    Simulation,
    Replicate,
    Learner,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::SubsetSampling => 0x5355_4253,
            Stream::Folds => 0x464f_4c44,
            Stream::TestSplit => 0x5445_5354,
            Stream::Simulation => 0x5349_4d55,
            Stream::Replicate => 0x5245_504c,
            Stream::Learner => 0x4c45_524e,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: Stream, index: u64) -> u64 {
    splitmix64(splitmix64(master) ^ splitmix64(stream.tag()) ^ splitmix64(index.wrapping_add(1)))
}

pub fn stream_rng(master: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream, index))
}
