//! Deterministic, platform-independent randomness.
//!
//! ChaCha8 keyed by the run seed; each worker draws from its own stream of
//! that key, so worker state never depends on thread scheduling.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone)]
pub struct StreamRng(ChaCha8Rng);

impl StreamRng {
    pub fn new(seed: u64) -> Self {
        StreamRng(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Generator for one worker of a run: same key as the run, stream = worker id.
    pub fn for_worker(seed: u64, worker: usize) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(worker as u64);
        StreamRng(inner)
    }

    /// `len` i.i.d. draws from Normal(mean 0, standard deviation `std_dev`).
    pub fn normal_vec(&mut self, len: usize, std_dev: f64) -> Vec<f64> {
        let normal = Normal::new(0.0, std_dev).expect("standard deviation must be finite and >= 0");
        (0..len).map(|_| normal.sample(&mut self.0)).collect()
    }
}

impl RngCore for StreamRng {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}
