//! Deterministic random streams and block-parallel accumulation.
//!
//! Samples are grouped into fixed blocks of [`BLOCK`]. Block `b` of the stream
//! labelled `label` draws from its own ChaCha8 stream keyed by the master seed
//! and the label, so a sample's value never depends on how blocks are spread
//! over worker threads. Block partial sums are folded in block order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, SingularKind};

pub const BLOCK: u64 = 1024;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// 64-bit FNV-1a hash.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ *b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Seed for the stream family `label` under `master`.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    splitmix64(master ^ splitmix64(fnv1a(label.as_bytes())))
}

/// Independent stream `index` of the family `label`.
pub fn stream(master: u64, label: &str, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master, label));
    rng.set_stream(index);
    rng
}

/// Outcome of one Monte Carlo draw.
#[derive(Debug, Clone, PartialEq)]
pub enum Draw {
    /// Contribution per component.
    Value(Vec<f64>),
    /// Zero contribution; the reason is tallied.
    Rejected(Rejection),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    /// Outside the integration domain (overlap, wall margin, etc.).
    Domain,
    /// Singular trajectory under the configured tolerances.
    Singular,
}

impl From<&Error> for Rejection {
    fn from(e: &Error) -> Self {
        match e {
            Error::SingularSample(_) => Rejection::Singular,
            _ => Rejection::Domain,
        }
    }
}

impl From<SingularKind> for Rejection {
    fn from(_: SingularKind) -> Self {
        Rejection::Singular
    }
}

/// Running sums of a vector-valued signed estimator.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Accumulator {
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
    pub n: u64,
    /// Draws outside the integration domain (exact zeros).
    pub rejected: u64,
    /// Draws discarded as singular trajectories (exact zeros).
    pub singular: u64,
}

impl Accumulator {
    pub fn new(dim: usize) -> Self {
        Self { sum: vec![0.0; dim], sum_sq: vec![0.0; dim], ..Default::default() }
    }

    pub fn dim(&self) -> usize {
        self.sum.len()
    }

    pub fn push(&mut self, d: &Draw) {
        self.n += 1;
        match d {
            Draw::Value(v) => {
                for (c, x) in v.iter().enumerate() {
                    self.sum[c] += x;
                    self.sum_sq[c] += x * x;
                }
            }
            Draw::Rejected(Rejection::Domain) => self.rejected += 1,
            Draw::Rejected(Rejection::Singular) => self.singular += 1,
        }
    }

    pub fn merge(&mut self, other: &Accumulator) {
        for c in 0..self.dim() {
            self.sum[c] += other.sum[c];
            self.sum_sq[c] += other.sum_sq[c];
        }
        self.n += other.n;
        self.rejected += other.rejected;
        self.singular += other.singular;
    }

    pub fn mean(&self, c: usize) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sum[c] / self.n as f64
        }
    }

    /// Standard error of the mean of component `c`.
    pub fn stderr(&self, c: usize) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        let mean = self.sum[c] / n;
        let var = ((self.sum_sq[c] - n * mean * mean) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    }
}

/// Runs `samples` draws of `draw` in fixed-size blocks. `chunk` is the number of
/// blocks handed to a worker at a time; it affects scheduling only.
pub fn run_blocks<F>(master: u64, label: &str, samples: u64, dim: usize, chunk: usize, draw: F) -> Accumulator
where
    F: Fn(&mut StreamRng) -> Draw + Sync,
{
    let blocks = samples.div_ceil(BLOCK) as usize;
    let partials: Vec<Accumulator> = (0..blocks)
        .into_par_iter()
        .with_min_len(chunk.max(1))
        .map(|b| {
            let b = b as u64;
            let mut rng = stream(master, label, b);
            let count = BLOCK.min(samples - b * BLOCK);
            let mut acc = Accumulator::new(dim);
            for _ in 0..count {
                acc.push(&draw(&mut rng));
            }
            acc
        })
        .collect();
    partials.iter().fold(Accumulator::new(dim), |mut acc, p| {
        acc.merge(p);
        acc
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_distinct_and_reproducible() {
        let a: u64 = stream(7, "x", 0).random();
        let b: u64 = stream(7, "x", 0).random();
        let c: u64 = stream(7, "x", 1).random();
        let d: u64 = stream(7, "y", 0).random();
        let e: u64 = stream(8, "x", 0).random();
        assert_eq!(a, b);
        assert!(a != c && a != d && a != e);
    }

    #[test]
    fn chunking_does_not_change_sums() {
        let f = |rng: &mut StreamRng| Draw::Value(vec![rng.random::<f64>(), rng.random::<f64>().ln()]);
        let one = run_blocks(3, "t", 10_000, 2, 1, f);
        let many = run_blocks(3, "t", 10_000, 2, 4, f);
        assert_eq!(one, many);
        assert_eq!(one.n, 10_000);
    }

    #[test]
    fn uniform_mean_and_stderr() {
        let acc = run_blocks(1, "u", 100_000, 1, 1, |rng| Draw::Value(vec![rng.random::<f64>()]));
        assert!((acc.mean(0) - 0.5).abs() < 4.0 * acc.stderr(0));
        let expected = (1.0 / 12.0 / 100_000.0f64).sqrt();
        assert!((acc.stderr(0) / expected - 1.0).abs() < 0.02);
    }

    #[test]
    fn rejections_count_as_zeros() {
        let acc = run_blocks(1, "r", 2048, 1, 1, |rng| {
            if rng.random::<bool>() {
                Draw::Value(vec![2.0])
            } else {
                Draw::Rejected(Rejection::Domain)
            }
        });
        assert_eq!(acc.n, 2048);
        assert!((acc.mean(0) - 2.0 * (acc.n - acc.rejected) as f64 / acc.n as f64).abs() < 1e-12);
    }
}
