//! Counter-based expansion of one master seed into independent streams.
//!
//! `derive(master, trial, stream)` mixes the three words with the SplitMix64
//! finalizer, so every (trial, stream) pair gets its own ChaCha generator and
//! oracle draws can be varied independently of verifier randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stream {
    Oracle,
    Verifier,
    Strategy,
    Payload,
    /// Sub-master for one meta-trial of sequential repetition.
    Repetition,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Oracle => 0x6f72_6163_6c65_0001,
            Stream::Verifier => 0x7665_7269_6669_0002,
            Stream::Strategy => 0x7374_7261_7465_0003,
            Stream::Payload => 0x7061_796c_6f61_0004,
            Stream::Repetition => 0x7265_7065_6174_0005,
        }
    }
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(master: u64, trial: u64, stream: Stream) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(trial)) ^ stream.tag())
}

pub fn rng_for(master: u64, trial: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, trial, stream))
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
