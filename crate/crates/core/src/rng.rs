//! Counter-based random streams.
//!
//! All randomness derives from one master seed. A ChaCha8 keystream is keyed
//! by the seed and split into independent streams by its 64-bit nonce, so a
//! replication's draws depend only on `(seed, stream id)` and never on which
//! worker produced them.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TAG_SHIFT: u32 = 56;

/// Stream families; the tag lives in the top byte of the stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum StreamTag {
    Batch = 0,
    SumReplication = 1,
    FieldPhase = 2,
    Coverage = 3,
}

/// Builds stream ids of the form `tag | slot << 40 | index`.
pub fn stream_id(tag: StreamTag, slot: u64, index: u64) -> u64 {
    debug_assert!(slot < (1 << 16));
    debug_assert!(index < (1 << 40));
    ((tag as u64) << TAG_SHIFT) | (slot << 40) | index
}

#[derive(Clone)]
pub struct StreamFactory {
    base: ChaCha8Rng,
}

impl StreamFactory {
    pub fn new(seed: u64) -> Self {
        Self {
            base: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn stream(&self, id: u64) -> ChaCha8Rng {
        let mut rng = self.base.clone();
        rng.set_stream(id);
        rng
    }

    /// Stream positioned at its `offset`-th 64-bit word.
    pub fn stream_at(&self, id: u64, offset: u64) -> ChaCha8Rng {
        let mut rng = self.stream(id);
        rng.set_word_pos(2 * offset as u128);
        rng
    }
}

/// Maps 64 random bits to a uniform in `(0, 1]` using the top 53 bits.
#[inline]
pub fn unit_open_closed(bits: u64) -> f64 {
    ((bits >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[inline]
pub fn next_unit<R: RngCore>(rng: &mut R) -> f64 {
    unit_open_closed(rng.next_u64())
}
