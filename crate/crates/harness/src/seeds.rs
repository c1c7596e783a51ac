//! Deterministic per-frame random streams.
//!
//! Every frame owns a ChaCha key derived from the master seed and the frame
//! index; channel, data bits and noise use distinct stream ids under that
//! key, so they never overlap and do not depend on the sweep point or on
//! which worker ran the frame.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Channel = 0,
    Bits = 1,
    Noise = 2,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn frame_rng(master_seed: u64, frame: u64, stream: Stream) -> ChaCha8Rng {
    let key = splitmix64(master_seed ^ splitmix64(frame));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(stream as u64);
    rng
}

/// Seed of the run-wide interleaver.
pub fn interleaver_seed(master_seed: u64) -> u64 {
    splitmix64(master_seed ^ 0x5eed_1e55_0000_0001)
}
