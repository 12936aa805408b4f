//! Deterministic seed derivation for per-(realization, trajectory, layer) streams.
//!
//! Indices are packed into 64 bits (20 bits realization, 24 bits trajectory,
//! 20 bits layer), mixed with the master seed and passed through the
//! SplitMix64 finalizer. The finalizer is a bijection, so within the packed
//! ranges distinct tuples always map to distinct seeds for a fixed master
//! seed. Indices beyond the ranges are folded in and lose that guarantee.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const REALIZATION_BITS: u32 = 20;
pub const TRAJECTORY_BITS: u32 = 24;
pub const LAYER_BITS: u32 = 20;

/// Trajectory index reserved for realization-level streams (circuit angles,
/// frozen measurement patterns). Ordinary trajectories must stay below it.
pub const PROGRAM_STREAM: u64 = (1 << TRAJECTORY_BITS) - 1;

/// Stream RNG type shared by all engines. ChaCha is counter based, so each
/// derived stream is independent of scheduling.
pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn mask(bits: u32) -> u64 {
    (1u64 << bits) - 1
}

pub fn derive_stream_seed(master_seed: u64, realization: u64, trajectory: u64, layer: u64) -> u64 {
    let packed = ((realization & mask(REALIZATION_BITS)) << (TRAJECTORY_BITS + LAYER_BITS))
        | ((trajectory & mask(TRAJECTORY_BITS)) << LAYER_BITS)
        | (layer & mask(LAYER_BITS));
    let overflow = (realization >> REALIZATION_BITS)
        | (trajectory >> TRAJECTORY_BITS)
        | (layer >> LAYER_BITS);
    let mut key = splitmix64(master_seed);
    if overflow != 0 {
        key ^= splitmix64(
            (realization >> REALIZATION_BITS)
                .wrapping_mul(0x2545_f491_4f6c_dd1d)
                .wrapping_add((trajectory >> TRAJECTORY_BITS).wrapping_mul(0x9e37_79b9))
                .wrapping_add(layer >> LAYER_BITS),
        );
    }
    splitmix64(packed ^ key)
}

pub fn stream_rng(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}
