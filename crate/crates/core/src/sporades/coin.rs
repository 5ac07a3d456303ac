//! Shared-seed common coin: output `view` of a SplitMix64 stream, reduced
//! mod `n`. Direct indexing means no state is carried between flips.

use serde::{Deserialize, Serialize};

use crate::block::ReplicaId;

const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoinConfig {
    pub shared_seed: u64,
    pub n: usize,
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The `index`-th (0-based) output of SplitMix64 seeded with `seed`.
pub fn splitmix64_at(seed: u64, index: u64) -> u64 {
    mix(seed.wrapping_add(index.wrapping_add(1).wrapping_mul(GAMMA)))
}

pub fn common_coin_flip(cfg: &CoinConfig, view: u64) -> ReplicaId {
    assert!(cfg.n >= 1);
    ReplicaId((splitmix64_at(cfg.shared_seed, view) % cfg.n as u64) as u32)
}
