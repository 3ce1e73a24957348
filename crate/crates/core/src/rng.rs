//! Seeded, splittable random streams.
//!
//! Every stochastic step draws from an [`RngStream`] identified by a seed and
//! a stream id. The same pair always yields the same sequence, whatever
//! thread or order it runs in, which is what makes replications and strata
//! reproducible when executed in parallel.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngStream { seed, stream_id }
    }

    /// A generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Child stream derived from this one and `index`.
    pub fn substream(&self, index: u64) -> RngStream {
        RngStream {
            seed: self.seed,
            stream_id: mix(self.stream_id ^ mix(index.wrapping_add(0x632b_e59b_d9b4_e019))),
        }
    }

    /// Child stream keyed by a text label, e.g. an experiment arm name.
    pub fn keyed(&self, label: &str) -> RngStream {
        // FNV-1a, stable across platforms and releases
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        self.substream(h)
    }
}

/// splitmix64 finaliser.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream-selection tags for the steps of one synthesis.
pub(crate) mod tags {
    pub const NOISE: u64 = 1;
    pub const SAMPLE_SIZE: u64 = 2;
    pub const MULTINOMIAL: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const STRATUM: u64 = 5;
}
