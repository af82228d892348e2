//! Keyed, seekable noise streams.
//!
//! Every random draw in the simulation is addressed by `(seed, domain,
//! stream index, position)`. A stream is a ChaCha8 keystream whose key is
//! derived from the seed and a domain tag; the stream index selects the
//! ChaCha nonce, so stream `k` can be produced without touching streams
//! `0..k`. Laser noise uses one stream per pulse frame, which is what makes
//! the output independent of how frames are scheduled.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bits::BitStream;

/// Domain tags keep independent consumers of the same user seed apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Laser = 0x6c61_7365_72,
    Detector = 0x6465_7465_6374,
    Reference = 0x7265_6665_72,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseKey([u8; 32]);

impl NoiseKey {
    pub fn new(seed: u64, domain: Domain) -> Self {
        let mut state = seed ^ (domain as u64).rotate_left(17);
        let mut key = [0u8; 32];
        for chunk in key.chunks_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        NoiseKey(key)
    }

    /// Independent generator for stream `index`.
    pub fn stream(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.0);
        rng.set_stream(index);
        rng
    }
}

/// `len` bits from the reference generator: stream `index` of the
/// reference domain. Used to calibrate the statistical tests.
pub fn reference_bits(seed: u64, index: u64, len: usize) -> BitStream {
    let mut bytes = vec![0u8; len.div_ceil(8)];
    NoiseKey::new(seed, Domain::Reference)
        .stream(index)
        .fill_bytes(&mut bytes);
    BitStream::from_bytes(&bytes, len).expect("byte count matches length")
}
