//! Portable, seed-addressable random streams.
//!
//! Every stream is a ChaCha20 keystream (RFC 8439 block function, 64-bit
//! counter, 64-bit stream id). The 256-bit key holds the base seed as eight
//! little-endian bytes followed by 24 zero bytes; the stream id selects an
//! independent sequence under that key. Replication `r` of an experiment
//! with base seed `s` draws from `stream_rng(s, r)`, so replications can run
//! in any order or concurrently and still reproduce bit-for-bit.
//!
//! Uniform variates take the top 53 bits of one `u64` output. Normal
//! variates use the ziggurat sampler from `rand_distr`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

pub type SimRng = ChaCha20Rng;

pub fn stream_rng(seed: u64, stream: u64) -> SimRng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    let mut rng = ChaCha20Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

/// Uniform on `[0, 1)` with 53 bits of resolution.
#[inline]
pub fn unit<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[inline]
pub fn uniform<R: RngCore + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit(rng)
}

#[inline]
pub fn standard_normal<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}
