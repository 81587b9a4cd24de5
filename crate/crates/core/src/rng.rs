//! Counter-keyed random streams.
//!
//! Every stream is a ChaCha8 generator whose seed is a pure function of
//! `(master seed, purpose, epoch, item)`, so the values drawn for one work
//! item never depend on how many other items ran before it or on which thread.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share a stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    WeightFaults = 1,
    NeuronFaults = 2,
    Init = 3,
    Dataset = 4,
    Shuffle = 5,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub master_seed: u64,
    pub purpose: Purpose,
    pub epoch: u64,
    pub item: u64,
}

impl StreamKey {
    pub fn new(master_seed: u64, purpose: Purpose, epoch: u64, item: u64) -> Self {
        StreamKey {
            master_seed,
            purpose,
            epoch,
            item,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        keyed_rng(self)
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn keyed_rng(key: &StreamKey) -> ChaCha8Rng {
    let mut state = key.master_seed;
    for word in [key.purpose as u64, key.epoch, key.item] {
        state = splitmix64(&mut state) ^ word;
    }
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}
