//! Counter-based random streams.
//!
//! A stream is a `(master_seed, stream_id)` pair mapped onto ChaCha8 with
//! `set_stream`, so any sample can be regenerated in isolation. Child streams
//! are derived by hashing the parent id with a sample index.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self { master_seed, stream_id }
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Independent child stream for sample `index`.
    pub fn substream(&self, index: u64) -> RngStream {
        RngStream {
            master_seed: self.master_seed,
            stream_id: mix(self.stream_id, index),
        }
    }

    /// Child stream for a named experiment or role.
    pub fn labeled(&self, label: &str) -> RngStream {
        let h = label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
        });
        self.substream(h)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn mix(parent: u64, index: u64) -> u64 {
    splitmix64(parent ^ splitmix64(index).rotate_left(17))
}

/// Standard Gaussian vector in R^3.
#[inline]
pub fn gaussian3<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    Vec3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

/// Uniform point on the unit sphere (normalized Gaussian triple).
#[inline]
pub fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let g = gaussian3(rng);
        let n = g.norm();
        if n > 1e-12 {
            return g / n;
        }
    }
}

/// Uniform point in the unit ball.
pub fn unit_ball_point<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    let u: f64 = rng.random();
    unit_vector(rng) * u.cbrt()
}
