//! Seeded, splittable randomness.
//!
//! Every stochastic operation in the crate takes an explicit [`Prng`] handle,
//! so runs are bit-reproducible given a seed and independent streams can be
//! handed to parallel workers without sharing state.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// A seedable pseudo-random generator with cheap stream splitting.
#[derive(Debug, Clone)]
pub struct Prng {
    inner: ChaCha12Rng,
}

impl Prng {
    pub fn seed_from(seed: u64) -> Self {
        Self {
            inner: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    /// Splits off an independent child stream, advancing this generator.
    pub fn split(&mut self) -> Self {
        Self::seed_from(self.inner.next_u64())
    }

    /// Derives `n` independent streams keyed by index. The streams do not
    /// depend on how many of them are consumed, so work distributed over
    /// them is deterministic under any parallel schedule.
    pub fn fork(&mut self, n: usize) -> Vec<Self> {
        let base = self.inner.next_u64();
        (0..n as u64).map(|i| Self::seed_from(splitmix(base, i))).collect()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn normal_vec(&mut self, d: usize) -> Vec<f64> {
        (0..d).map(|_| self.standard_normal()).collect()
    }

    /// Uniform draw on [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.inner.gen_range(lo..hi)
    }

    pub fn uniform_index(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }
}

/// Runs one closure per pre-forked stream, optionally across threads.
///
/// Results are identical for every worker count: each chain owns its stream,
/// so scheduling cannot influence the draws.
pub fn map_chains<T: Send>(
    mut streams: Vec<Prng>,
    workers: usize,
    f: impl Fn(usize, &mut Prng) -> T + Sync,
) -> Vec<T> {
    let n = streams.len();
    if workers <= 1 || n <= 1 {
        return streams
            .iter_mut()
            .enumerate()
            .map(|(i, s)| f(i, s))
            .collect();
    }
    let chunk = n.div_ceil(workers.min(n));
    let mut out: Vec<Option<T>> = (0..n).map(|_| None).collect();
    std::thread::scope(|scope| {
        let f = &f;
        for (ci, (slot_chunk, stream_chunk)) in
            out.chunks_mut(chunk).zip(streams.chunks_mut(chunk)).enumerate()
        {
            scope.spawn(move || {
                for (j, (slot, stream)) in
                    slot_chunk.iter_mut().zip(stream_chunk.iter_mut()).enumerate()
                {
                    *slot = Some(f(ci * chunk + j, stream));
                }
            });
        }
    });
    out.into_iter().map(|s| s.expect("chain completed")).collect()
}

fn splitmix(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}
