//! Seeded random streams.
//!
//! Every stream is ChaCha with 8 rounds. The 256-bit key is the seed as a
//! little-endian `u64` followed by 24 zero bytes; the 64-bit ChaCha stream id
//! selects an independent substream per purpose, so one experiment seed can be
//! split without the consumers interfering. Uniform reals use the top 53 bits
//! of each 64-bit output: `(x >> 11) * 2^-53`.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

/// Stream ids used by this crate.
pub mod streams {
    pub const DATA: u64 = 0;
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const PROBE: u64 = 3;
}

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

/// Uniform on `[0, 1)` with 53 bits of resolution.
pub fn unit_f64<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn uniform<R: RngCore + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit_f64(rng)
}
