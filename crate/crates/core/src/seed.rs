//! Seed derivation.
//!
//! Every random stream in a federation is keyed off one 64-bit master seed.
//! Sub-seeds are produced by folding a domain tag and the coordinates of the
//! stream (client index, round, epoch, ...) through the splitmix64 finalizer:
//!
//! ```text
//! h0 = mix(master ^ GOLDEN)
//! h1 = mix(h0 ^ tag)
//! hk = mix(h(k-1) ^ field(k-1))
//! ```
//!
//! The scheme is part of the reproducibility contract: changing it changes
//! every derived model.

/// Domain tags, one per independent stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 0x1,
    Select = 0x2,
    Shuffle = 0x3,
    Noise = 0x4,
    Partition = 0x5,
    Synth = 0x6,
    ClientId = 0x7,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// splitmix64 output function.
#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(master: u64, stream: Stream, fields: &[u64]) -> u64 {
    let mut h = mix(master ^ GOLDEN);
    h = mix(h ^ (stream as u64).wrapping_mul(GOLDEN));
    for &f in fields {
        h = mix(h.wrapping_add(GOLDEN) ^ f);
    }
    h
}

/// Seed of the Laplace stream for one client's upload in one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoiseSeed(pub u64);

impl NoiseSeed {
    pub fn derive(master: u64, client_index: u32, round: u32) -> Self {
        NoiseSeed(derive(master, Stream::Noise, &[client_index as u64, round as u64]))
    }
}

/// Seed of the per-epoch shuffle of a client's shard.
pub fn shuffle_seed(master: u64, client_index: u32, round: u32, epoch: u32) -> u64 {
    derive(
        master,
        Stream::Shuffle,
        &[client_index as u64, round as u64, epoch as u64],
    )
}
