//! Signed Monte Carlo estimators for correlation functions and for both sides
//! of the identities relating them.
//!
//! Every estimator is an average over independent draws produced by
//! [`crate::rng::run_blocks`]; rejected draws count as exact zeros. Stream
//! labels include the estimator kind, its tree, the evaluation time and point,
//! so distinct estimates built from one master seed use independent streams.

mod bbgky;
mod cancel;
mod rho;
mod step;

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::densities::{sample_point, InitialMeasure};
use crate::dynamics::{backward, BoxSpec, Configuration, Tolerances, Vec3};
use crate::error::{Error, Result};
use crate::rng::Accumulator;

pub use bbgky::{bbgky_residual, collision_operator, BbgkyPoint};
pub use cancel::{verify_cancellation, CancellationReport};
pub use rho::{rho_direct, rho_series, tree_value};
pub use step::{verify_integration_step, StepComparison, StepTerm};

/// Signed estimate with its standard error and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub n_samples: u64,
    /// Draws contributing an exact zero, singular ones included.
    pub n_rejected: u64,
    /// Draws discarded as singular trajectories.
    pub n_singular: u64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub breakdown: Vec<Term>,
}

/// A named contribution to a composite estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub label: String,
    pub multiplicity: usize,
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    /// A value known without sampling.
    pub fn exact(value: f64, seed: u64) -> Self {
        Self { value, stderr: 0.0, n_samples: 0, n_rejected: 0, n_singular: 0, seed, breakdown: Vec::new() }
    }

    pub fn from_accumulator(acc: &Accumulator, component: usize, seed: u64) -> Self {
        Self {
            value: acc.mean(component),
            stderr: acc.stderr(component),
            n_samples: acc.n,
            n_rejected: acc.rejected + acc.singular,
            n_singular: acc.singular,
            seed,
            breakdown: Vec::new(),
        }
    }

    /// `sum_i mult_i * e_i` over independent estimates, errors in quadrature.
    pub fn weighted_sum<'a, I>(terms: I, seed: u64) -> Self
    where
        I: IntoIterator<Item = (String, usize, &'a Estimate)>,
    {
        let mut out = Estimate::exact(0.0, seed);
        let mut var = 0.0;
        for (label, mult, e) in terms {
            let w = mult as f64;
            out.value += w * e.value;
            var += (w * e.stderr).powi(2);
            out.n_samples += e.n_samples;
            out.n_rejected += e.n_rejected;
            out.n_singular += e.n_singular;
            out.breakdown.push(Term { label, multiplicity: mult, value: e.value, stderr: e.stderr });
        }
        out.stderr = var.sqrt();
        out
    }

    /// Difference of two independent estimates.
    pub fn minus(&self, other: &Estimate) -> Estimate {
        Estimate {
            value: self.value - other.value,
            stderr: self.stderr.hypot(other.stderr),
            n_samples: self.n_samples + other.n_samples,
            n_rejected: self.n_rejected + other.n_rejected,
            n_singular: self.n_singular + other.n_singular,
            seed: self.seed,
            breakdown: Vec::new(),
        }
    }

    /// `|self - other| <= nsigma * combined stderr`.
    pub fn agrees_with(&self, other: &Estimate, nsigma: f64) -> bool {
        (self.value - other.value).abs() <= nsigma * self.stderr.hypot(other.stderr)
    }

    /// Number of combined standard errors separating the two estimates.
    pub fn z_score(&self, other: &Estimate) -> f64 {
        let s = self.stderr.hypot(other.stderr);
        if s == 0.0 {
            if self.value == other.value {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.value - other.value).abs() / s
        }
    }
}

/// Inner estimator used for `rho_{n+1}` inside the collision operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerEstimator {
    Direct,
    Series,
}

/// Everything an estimator needs: measure (with box and `N`), evaluation
/// point `z_n`, time, sample count, tolerances and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub measure: InitialMeasure,
    pub point: Configuration,
    pub t: f64,
    pub samples: u64,
    pub tol: Tolerances,
    pub seed: u64,
    /// Blocks per worker task; scheduling only, never changes results.
    pub chunk: usize,
}

impl ExperimentSpec {
    pub fn new(measure: InitialMeasure, point: Configuration, t: f64, samples: u64, seed: u64) -> Self {
        Self { measure, point, t, samples, tol: Tolerances::default(), seed, chunk: 1 }
    }

    pub fn bx(&self) -> &BoxSpec {
        self.measure.box_spec()
    }

    pub fn n(&self) -> usize {
        self.point.len()
    }

    /// Total particle number `N` (or `n_max`).
    pub fn total(&self) -> usize {
        self.measure.particles()
    }

    /// Same experiment at another point and time.
    pub fn at(&self, point: Configuration, t: f64) -> Self {
        Self { point, t, ..self.clone() }
    }

    pub fn with_samples(&self, samples: u64) -> Self {
        Self { samples, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        self.tol.validate()?;
        if !(self.t >= 0.0 && self.t.is_finite()) {
            return Err(Error::InvalidInput(format!("time must be non-negative, got {}", self.t)));
        }
        if self.point.is_empty() {
            return Err(Error::InvalidInput("evaluation point needs at least one particle".into()));
        }
        if !crate::dynamics::is_admissible(self.bx(), self.point.states()) {
            return Err(Error::InvalidInput("evaluation point is not admissible".into()));
        }
        Ok(())
    }

    /// Stream label unique to the estimator kind, time and evaluation point.
    pub(crate) fn label(&self, kind: &str) -> String {
        let mut bytes = self.t.to_le_bytes().to_vec();
        for s in self.point.states() {
            for x in s.q.iter().chain(s.p.iter()) {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
        }
        format!("{kind}|{:016x}", crate::rng::fnv1a(&bytes))
    }
}

pub(crate) fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    let [x, y, z]: [f64; 3] = UnitSphere.sample(rng);
    Vec3::new(x, y, z)
}

pub(crate) const SPHERE_AREA: f64 = 4.0 * PI;

/// Draws an evaluation point whose backward `n`-particle flow over `t` is
/// regular, redrawing singular points.
pub fn sample_evaluation_point<R: Rng + ?Sized>(
    measure: &InitialMeasure,
    n: usize,
    region: Option<(f64, f64)>,
    t: f64,
    tol: &Tolerances,
    rng: &mut R,
) -> Result<Configuration> {
    for _ in 0..1000 {
        let z = sample_point(measure.box_spec(), n, measure.envelope(), region, rng)?;
        if backward(measure.box_spec(), &z, t, tol).is_ok() {
            return Ok(z);
        }
    }
    Err(Error::InvalidInput("no regular evaluation point found in 1000 draws".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_sum_combines_in_quadrature() {
        let a = Estimate { stderr: 3.0, ..Estimate::exact(1.0, 0) };
        let b = Estimate { stderr: 4.0, ..Estimate::exact(2.0, 0) };
        let s = Estimate::weighted_sum([("a".to_string(), 1, &a), ("b".to_string(), 2, &b)], 0);
        assert_eq!(s.value, 5.0);
        assert!((s.stderr - (9.0f64 + 64.0).sqrt()).abs() < 1e-15);
        assert_eq!(s.breakdown.len(), 2);
        assert!(a.agrees_with(&b, 1.0));
        assert!((a.minus(&b).stderr - 5.0).abs() < 1e-15);
    }
}
