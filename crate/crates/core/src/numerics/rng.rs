//! Addressable random-number streams.
//!
//! A stream is identified by a master seed and a 64-bit stream id. The
//! master seed keys a ChaCha20 generator and the stream id selects one of its
//! 2^64 independent nonce streams, so any `(replication, draw, purpose)`
//! address can be opened directly without coordinating with other workers.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

use super::special::normal_quantile;

#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    stream_id: u64,
    rng: ChaCha20Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut sm = master_seed;
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut sm).to_le_bytes());
        }
        let mut rng = ChaCha20Rng::from_seed(seed);
        rng.set_stream(stream_id);
        Self { master_seed, stream_id, rng }
    }

    /// Opens the stream addressed by a hierarchical path such as
    /// `[replication, draw]`.
    pub fn at(master_seed: u64, path: &[u64]) -> Self {
        Self::new(master_seed, stream_id_for(path))
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on the open interval (0, 1), 53-bit resolution.
    pub fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * ((self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64))
    }

    /// Standard normal by inversion: exactly one `u64` per variate, so the
    /// k-th variate of a stream never depends on how earlier ones were used.
    pub fn std_normal(&mut self) -> f64 {
        normal_quantile(self.uniform_open())
    }

    pub fn fill_std_normals(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.std_normal();
        }
    }
}

/// `n` standard normal variates from the stream.
pub fn draw_std_normals(stream: &mut RngStream, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    stream.fill_std_normals(&mut out);
    out
}

/// Folds a path of indices into one stream id.
pub fn stream_id_for(path: &[u64]) -> u64 {
    let mut h = 0x6a09_e667_f3bc_c908u64 ^ path.len() as u64;
    for &p in path {
        let mut s = h ^ p.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        h = splitmix64(&mut s);
    }
    h
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
