//! Per-path random streams.
//!
//! Every path owns one ChaCha8 stream selected by its index, so the normal
//! draws of path `p` depend only on `(seed, p)` and the order in which the
//! path consumes them. Results do not depend on how paths are scheduled
//! across threads.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use statrs::distribution::{ContinuousCDF, Normal};

/// Domain separators so that different uses of one user seed never share streams.
pub(crate) const DOMAIN_FORWARD: u64 = 0x0000_0000_0000_0000;
pub(crate) const DOMAIN_TERMINAL: u64 = 0x9e37_79b9_7f4a_7c15;
pub(crate) const DOMAIN_BRIDGE: u64 = 0xc2b2_ae3d_27d4_eb4f;
pub(crate) const DOMAIN_FLASHLIGHT: u64 = 0x1656_67b1_9e37_79f9;
pub(crate) const DOMAIN_OPTIONS: u64 = 0x27d4_eb2f_1656_67c5;

/// Seed for sub-run `index` of a study, mixed with splitmix64 so that
/// neighbouring indices and streams give unrelated seeds.
pub fn derive_seed(master: u64, index: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(stream.wrapping_mul(0xd1b5_4a32_d192_ed03));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub struct PathRng {
    inner: ChaCha8Rng,
    normal: Normal,
}

impl PathRng {
    pub fn new(seed: u64, domain: u64, path: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed ^ domain);
        inner.set_stream(path);
        Self {
            inner,
            normal: Normal::standard(),
        }
    }

    /// Uniform draw in the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.inner.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw by inverse-CDF transform of one uniform.
    pub fn normal(&mut self) -> f64 {
        let u = self.uniform();
        self.normal.inverse_cdf(u)
    }
}
