//! Shared fixtures for the benchmarks.

use hardsphere::densities::sample_point;
use hardsphere::{BoxSpec, Configuration, GaussianEnvelope, NodeVar, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn unit_box() -> BoxSpec {
    BoxSpec::cube(1.0, 0.1).expect("valid box")
}

/// An admissible gas of `n` particles at inverse temperature 1.
pub fn gas(n: usize, seed: u64) -> Configuration {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_point(&unit_box(), n, &GaussianEnvelope::new(1.0).expect("positive beta"), None, &mut rng).expect("sparse packing")
}

/// `m` node variables with times decreasing below `t`.
pub fn node_vars(m: usize, t: f64, seed: u64) -> Vec<NodeVar> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut times: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * t).collect();
    times.sort_by(|a, b| b.total_cmp(a));
    times
        .into_iter()
        .map(|t| {
            let omega = loop {
                let v = Vec3::from_fn(|_, _| 2.0 * rng.random::<f64>() - 1.0);
                let r = v.norm();
                if r > 1e-3 && r <= 1.0 {
                    break v / r;
                }
            };
            let p_hat = Vec3::from_fn(|_, _| 2.0 * rng.random::<f64>() - 1.0);
            NodeVar { t, omega, p_hat }
        })
        .collect()
}
