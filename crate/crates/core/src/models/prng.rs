//! Seeded random streams.
//!
//! Each consumer (data, noise, init, eval) draws from its own ChaCha8 stream
//! keyed by `(seed, stream)`, so adding draws in one consumer never shifts
//! another. `fork(i)` derives an independent child stream for item `i`,
//! which makes per-sample data a pure function of its global index.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stream {
    Data,
    Noise,
    Init,
    Eval,
    Task,
    Custom(u64),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Data => 1,
            Stream::Noise => 2,
            Stream::Init => 3,
            Stream::Eval => 4,
            Stream::Task => 5,
            Stream::Custom(v) => 0x1000_0000 ^ v,
        }
    }
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct Prng {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl Prng {
    pub fn new(seed: u64, stream: Stream) -> Self {
        Self::from_parts(seed, stream.id())
    }

    fn from_parts(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Prng { seed, stream, rng }
    }

    /// Independent child stream; depends only on (seed, stream, index).
    pub fn fork(&self, index: u64) -> Prng {
        let child = mix64(self.stream.rotate_left(29) ^ mix64(index.wrapping_add(0x9E37_79B9_7F4A_7C15)));
        Self::from_parts(self.seed, child)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.standard_normal()
    }

    /// Index drawn from a cumulative distribution (last entry ~ 1).
    pub fn categorical(&mut self, cumulative: &[f64]) -> usize {
        let u = self.uniform() * cumulative[cumulative.len() - 1];
        cumulative
            .partition_point(|&c| c <= u)
            .min(cumulative.len() - 1)
    }
}
