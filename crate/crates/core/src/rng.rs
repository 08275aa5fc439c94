use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Recorded in run metadata so seeded output can be traced to a generator.
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha), one stream per chain";

/// Source of standard normal draws for the samplers.
pub trait NoiseSource {
    fn fill_standard_normal(&mut self, out: &mut [f64]);
}

/// Seeded generator on an independent stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn inner(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

impl NoiseSource for RngStream {
    fn fill_standard_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.rng.sample(StandardNormal);
        }
    }
}

/// Suppresses all noise, turning every sampler into its deterministic solver.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn fill_standard_normal(&mut self, out: &mut [f64]) {
        out.fill(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_and_stream_reproduce() {
        let mut a = RngStream::new(42, 3);
        let mut b = RngStream::new(42, 3);
        let mut x = [0.0; 16];
        let mut y = [0.0; 16];
        a.fill_standard_normal(&mut x);
        b.fill_standard_normal(&mut y);
        assert_eq!(x, y);
    }

    #[test]
    fn distinct_streams_differ() {
        let mut a = RngStream::new(42, 0);
        let mut b = RngStream::new(42, 1);
        let mut x = [0.0; 16];
        let mut y = [0.0; 16];
        a.fill_standard_normal(&mut x);
        b.fill_standard_normal(&mut y);
        assert_ne!(x, y);
    }
}
