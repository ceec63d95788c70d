//! Seeded, per-record random streams.
//!
//! Every stochastic choice tied to a triplet draws from its own stream keyed by
//! `(seed, triplet id, purpose)`, so results do not depend on processing order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// 64-bit FNV-1a. Stable across platforms and toolchains, unlike `DefaultHasher`.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Purposes get distinct streams so e.g. IoU ordering and fallback draws are independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    IouOrder,
    /// Fallback draws; the round separates QoU, IoU, and assembly refills.
    Fallback(u8),
    TargetSlot,
    Guess,
}

impl Stream {
    fn salt(self) -> u64 {
        match self {
            Stream::IouOrder => 0x9e37_79b9_7f4a_7c15,
            Stream::Fallback(round) => 0xc2b2_ae3d_27d4_eb4f ^ (u64::from(round) << 56),
            Stream::TargetSlot => 0x1656_67b1_9e37_79f9,
            Stream::Guess => 0x27d4_eb2f_1656_67c5,
        }
    }
}

pub fn record_rng(seed: u64, triplet_id: &str, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a(triplet_id.as_bytes()) ^ stream.salt())
}
