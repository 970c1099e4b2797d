//! Initial measures with a Gaussian momentum envelope and their time-zero
//! correlation functions.
//!
//! Densities are stored unnormalized; the configurational normalization is
//! estimated once by Monte Carlo at construction and shared by every quantity
//! derived from the measure, so that it cancels in comparisons between
//! estimators.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{is_admissible, BoxSpec, Configuration, ParticleState, Vec3};
use crate::error::{Error, Result};
use crate::estimators::Estimate;
use crate::rng::{run_blocks, Draw, Rejection};

/// Maxwellian `h_beta(p) = (beta / 2 pi)^{3/2} exp(-beta p^2 / 2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianEnvelope {
    pub beta: f64,
}

impl GaussianEnvelope {
    pub fn new(beta: f64) -> Result<Self> {
        if beta > 0.0 && beta.is_finite() {
            Ok(Self { beta })
        } else {
            Err(Error::InvalidInput(format!("beta must be positive, got {beta}")))
        }
    }

    pub fn log_h(&self, p: &Vec3) -> f64 {
        1.5 * (self.beta / (2.0 * PI)).ln() - 0.5 * self.beta * p.norm_squared()
    }

    pub fn h(&self, p: &Vec3) -> f64 {
        self.log_h(p).exp()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        let s = self.beta.sqrt().recip();
        Vec3::from_fn(|_, _| {
            let x: f64 = StandardNormal.sample(rng);
            s * x
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialProfile {
    /// `1 + lambda cos(phase)`.
    Smooth,
    /// `1 + lambda sign(cos(phase))`, bounded and discontinuous.
    Rough,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeasureVariant {
    Equilibrium {
        beta: f64,
    },
    /// Spatial factor `prod_i (1 + lambda s(2 pi sum_d w_d q_{i,d} / L_d))`.
    PerturbedProduct {
        beta: f64,
        lambda: f64,
        wavevector: [f64; 3],
        profile: SpatialProfile,
    },
    /// Grand-canonical equilibrium truncated at `n_max` particles.
    GrandCanonical {
        beta: f64,
        activity: f64,
        n_max: usize,
    },
}

impl MeasureVariant {
    pub fn beta(&self) -> f64 {
        match self {
            MeasureVariant::Equilibrium { beta }
            | MeasureVariant::PerturbedProduct { beta, .. }
            | MeasureVariant::GrandCanonical { beta, .. } => *beta,
        }
    }

    fn lambda(&self) -> f64 {
        match self {
            MeasureVariant::PerturbedProduct { lambda, .. } => *lambda,
            _ => 0.0,
        }
    }
}

/// Monte Carlo estimate of the configurational normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    /// `Z` (canonical) or the grand partition sum `Xi`.
    pub value: f64,
    pub stderr: f64,
    pub samples: u64,
    /// Grand-canonical only: configurational integrals `Z_0..Z_{n_max}`.
    pub partial: Vec<f64>,
}

impl Normalization {
    pub fn rel_stderr(&self) -> f64 {
        self.stderr / self.value
    }
}

/// A draw of extra particles for the marginal integral together with its
/// proposal density and the combinatorial prefactor of its sector.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub states: Vec<ParticleState>,
    /// Log of the proposal density of `states` (including the sector choice).
    pub log_proposal: f64,
    /// `N!/(N-n)!` (canonical) or `1/k!` (grand canonical).
    pub combinatorial: f64,
}

/// Completions accepted by rejection against overlaps with the fixed particles.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalSample {
    /// Each completion with weight `V'^k g(y)`, the position density ratio to
    /// the untruncated uniform proposal.
    pub completions: Vec<(Vec<ParticleState>, f64)>,
    pub attempts: u64,
    pub rejected: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialMeasure {
    variant: MeasureVariant,
    bx: BoxSpec,
    particles: usize,
    envelope: GaussianEnvelope,
    normalization: Normalization,
}

impl InitialMeasure {
    /// Builds the measure and calibrates its normalization with `samples`
    /// configurations. `particles` is `N` for canonical variants and is ignored
    /// for the grand-canonical one.
    pub fn calibrate(variant: MeasureVariant, bx: BoxSpec, particles: usize, samples: u64, seed: u64) -> Result<Self> {
        let envelope = GaussianEnvelope::new(variant.beta())?;
        let particles = match &variant {
            MeasureVariant::PerturbedProduct { lambda, wavevector, .. } => {
                if !(lambda.abs() < 1.0) {
                    return Err(Error::InvalidInput(format!("|lambda| must be below 1, got {lambda}")));
                }
                if wavevector.iter().any(|w| !w.is_finite()) {
                    return Err(Error::InvalidInput("wavevector must be finite".into()));
                }
                particles
            }
            MeasureVariant::GrandCanonical { activity, n_max, .. } => {
                if !(*activity > 0.0 && activity.is_finite()) {
                    return Err(Error::InvalidInput(format!("activity must be positive, got {activity}")));
                }
                let bound = packing_bound(&bx);
                if *n_max > bound {
                    return Err(Error::InvalidInput(format!("n_max {n_max} exceeds the packing bound {bound}")));
                }
                *n_max
            }
            MeasureVariant::Equilibrium { .. } => particles,
        };
        if particles == 0 {
            return Err(Error::InvalidInput("particle number must be at least 1".into()));
        }
        if samples < 2 {
            return Err(Error::InvalidInput("normalization needs at least 2 samples".into()));
        }
        let placeholder = Normalization { value: 1.0, stderr: 0.0, samples: 0, partial: Vec::new() };
        let mut m = Self { variant, bx, particles, envelope, normalization: placeholder };
        m.normalization = m.estimate_normalization(samples, seed)?;
        Ok(m)
    }

    /// Replaces the calibrated normalization (for sharing one calibration across runs).
    pub fn with_normalization(mut self, normalization: Normalization) -> Self {
        self.normalization = normalization;
        self
    }

    pub fn variant(&self) -> &MeasureVariant {
        &self.variant
    }

    pub fn box_spec(&self) -> &BoxSpec {
        &self.bx
    }

    /// `N`, or `n_max` for the grand-canonical variant.
    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn envelope(&self) -> &GaussianEnvelope {
        &self.envelope
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn is_grand_canonical(&self) -> bool {
        matches!(self.variant, MeasureVariant::GrandCanonical { .. })
    }

    /// Spatial factor of one particle.
    pub fn g1(&self, q: &Vec3) -> f64 {
        match &self.variant {
            MeasureVariant::PerturbedProduct { lambda, wavevector, profile, .. } => {
                let l = self.bx.lengths();
                let phase = 2.0 * PI * (0..3).map(|d| wavevector[d] * q[d] / l[d]).sum::<f64>();
                let c = phase.cos();
                match profile {
                    SpatialProfile::Smooth => 1.0 + lambda * c,
                    SpatialProfile::Rough => 1.0 + lambda * if c >= 0.0 { 1.0 } else { -1.0 },
                }
            }
            _ => 1.0,
        }
    }

    pub fn spatial_factor(&self, states: &[ParticleState]) -> f64 {
        states.iter().map(|s| self.g1(&s.q)).product()
    }

    /// Log of the unnormalized density of an `states.len()`-particle
    /// configuration, or `None` where the density vanishes.
    pub fn log_density_unnormalized(&self, states: &[ParticleState]) -> Option<f64> {
        let n = states.len();
        let sector = match &self.variant {
            MeasureVariant::GrandCanonical { activity, n_max, .. } => {
                if n > *n_max {
                    return None;
                }
                n as f64 * activity.ln()
            }
            _ => {
                if n != self.particles {
                    return None;
                }
                0.0
            }
        };
        if !is_admissible(&self.bx, states) {
            return None;
        }
        let g = self.spatial_factor(states);
        debug_assert!(
            g > 0.0 && g <= (1.0 + self.variant.lambda().abs()).powi(n as i32) * (1.0 + 1e-12),
            "spatial factor {g} outside the envelope"
        );
        let h: f64 = states.iter().map(|s| self.envelope.log_h(&s.p)).sum();
        Some(sector + h + g.ln())
    }

    /// Normalized density `f_N^0` (or `f_n` for the grand-canonical variant).
    pub fn density_f0(&self, states: &[ParticleState]) -> f64 {
        self.log_density_f0(states).map_or(0.0, f64::exp)
    }

    pub fn log_density_f0(&self, states: &[ParticleState]) -> Option<f64> {
        self.log_density_unnormalized(states).map(|l| l - self.normalization.value.ln())
    }

    /// Constant `A` with `f_N <= A prod h_beta`.
    pub fn envelope_constant(&self) -> f64 {
        match &self.variant {
            MeasureVariant::GrandCanonical { activity, n_max, .. } => {
                (0..=*n_max).map(|n| activity.powi(n as i32)).fold(0.0, f64::max) / self.normalization.value
            }
            v => (1.0 + v.lambda().abs()).powi(self.particles as i32) / self.normalization.value,
        }
    }

    /// Largest particle count that sectors beyond `n` fixed particles can add.
    pub fn max_completion(&self, n: usize) -> usize {
        self.particles.saturating_sub(n)
    }

    /// Draws extra particles for `n` fixed ones: positions uniform in the
    /// admissible centre region, momenta from the envelope. No overlap check.
    pub fn propose_completion<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Completion {
        let (k, log_pk, combinatorial) = match &self.variant {
            MeasureVariant::GrandCanonical { n_max, .. } => {
                let sectors = n_max.saturating_sub(n) + 1;
                let k = rng.random_range(0..sectors);
                (k, -(sectors as f64).ln(), 1.0 / factorial(k))
            }
            _ => {
                let k = self.particles - n;
                (k, 0.0, falling_factorial(self.particles, n))
            }
        };
        let log_v = self.bx.free_volume().ln();
        let mut log_proposal = log_pk - k as f64 * log_v;
        let states = (0..k)
            .map(|_| {
                let p = self.envelope.sample(rng);
                log_proposal += self.envelope.log_h(&p);
                ParticleState::new(self.bx.sample_position(rng), p)
            })
            .collect();
        Completion { states, log_proposal, combinatorial }
    }

    /// Log of one unbiased draw of `rho_n^0(z)`, or `None` for an exact zero
    /// (inadmissible completion or `n > N`).
    pub fn log_rho0_draw<R: Rng + ?Sized>(&self, z: &[ParticleState], rng: &mut R) -> Option<f64> {
        if z.len() > self.particles {
            return None;
        }
        let c = self.propose_completion(z.len(), rng);
        self.log_rho0_given(z, &c)
    }

    /// Log of the `rho_n^0(z)` integrand for a given completion.
    pub fn log_rho0_given(&self, z: &[ParticleState], c: &Completion) -> Option<f64> {
        let mut full = z.to_vec();
        full.extend_from_slice(&c.states);
        self.log_density_f0(&full).map(|l| c.combinatorial.ln() + l - c.log_proposal)
    }

    /// One unbiased draw of `rho_n^0(z)`.
    pub fn rho0_draw<R: Rng + ?Sized>(&self, z: &[ParticleState], rng: &mut R) -> Draw {
        if z.len() > self.particles {
            return Draw::Value(vec![0.0]);
        }
        match self.log_rho0_draw(z, rng) {
            Some(l) => Draw::Value(vec![l.exp()]),
            None => Draw::Rejected(Rejection::Domain),
        }
    }

    /// Monte Carlo estimate of `rho_n^0(z)`; exact for `n = N` and `n > N`.
    pub fn rho0_oracle(&self, z: &[ParticleState], samples: u64, seed: u64) -> Estimate {
        let n = z.len();
        if n > self.particles {
            return Estimate::exact(0.0, seed);
        }
        if !self.is_grand_canonical() && n == self.particles {
            let v = falling_factorial(self.particles, n) * self.density_f0(z);
            return Estimate::exact(v, seed);
        }
        let acc = run_blocks(seed, "rho0", samples, 1, 1, |rng| self.rho0_draw(z, rng));
        Estimate::from_accumulator(&acc, 0, seed)
    }

    /// Completions of `z_n` by `k` particles drawn by rejection against
    /// overlaps and wall margins, until `draws` are accepted.
    pub fn sample_conditional<R: Rng + ?Sized>(
        &self,
        z_n: &[ParticleState],
        k: usize,
        draws: usize,
        rng: &mut R,
    ) -> Result<ConditionalSample> {
        if !is_admissible(&self.bx, z_n) {
            return Err(Error::InvalidInput("fixed configuration is not admissible".into()));
        }
        let vk = self.bx.free_volume().powi(k as i32);
        let mut out = ConditionalSample { completions: Vec::with_capacity(draws), attempts: 0, rejected: 0 };
        let mut full = z_n.to_vec();
        while out.completions.len() < draws {
            out.attempts += 1;
            full.truncate(z_n.len());
            for _ in 0..k {
                full.push(ParticleState::new(self.bx.sample_position(rng), self.envelope.sample(rng)));
            }
            if is_admissible(&self.bx, &full) {
                let y = full[z_n.len()..].to_vec();
                let w = vk * self.spatial_factor(&y);
                out.completions.push((y, w));
            } else {
                out.rejected += 1;
                if out.attempts >= 100 && out.rejected * 100 > out.attempts * 99 {
                    return Err(Error::PackingTooTight { rate: out.rejected as f64 / out.attempts as f64 });
                }
            }
        }
        Ok(out)
    }

    fn estimate_normalization(&self, samples: u64, seed: u64) -> Result<Normalization> {
        let v = self.bx.free_volume();
        match &self.variant {
            MeasureVariant::GrandCanonical { activity, n_max, .. } => {
                let mut partial = vec![1.0];
                let mut value = 1.0;
                let mut var = 0.0;
                for n in 1..=*n_max {
                    let acc = self.configurational_mc(n, samples, seed, &format!("norm-{n}"));
                    let vn = v.powi(n as i32);
                    let zn = vn * acc.mean(0);
                    let coef = activity.powi(n as i32) / factorial(n);
                    value += coef * zn;
                    var += (coef * vn * acc.stderr(0)).powi(2);
                    partial.push(zn);
                }
                Ok(Normalization { value, stderr: var.sqrt(), samples, partial })
            }
            _ => {
                let acc = self.configurational_mc(self.particles, samples, seed, "norm");
                let vn = v.powi(self.particles as i32);
                let value = vn * acc.mean(0);
                if !(value > 0.0) {
                    return Err(Error::PackingTooTight { rate: 1.0 });
                }
                Ok(Normalization { value, stderr: vn * acc.stderr(0), samples, partial: Vec::new() })
            }
        }
    }

    fn configurational_mc(&self, n: usize, samples: u64, seed: u64, label: &str) -> crate::rng::Accumulator {
        run_blocks(seed, label, samples, 1, 1, |rng| {
            let states: Vec<ParticleState> =
                (0..n).map(|_| ParticleState::new(self.bx.sample_position(rng), Vec3::zeros())).collect();
            if is_admissible(&self.bx, &states) {
                Draw::Value(vec![self.spatial_factor(&states)])
            } else {
                Draw::Rejected(Rejection::Domain)
            }
        })
    }
}

/// Crude upper bound on how many spheres fit in the box (volume ratio of the
/// box to a sphere, at close-packing density).
pub fn packing_bound(bx: &BoxSpec) -> usize {
    let a = bx.diameter();
    let sphere = PI / 6.0 * a * a * a;
    (0.7405 * bx.volume() / sphere).floor() as usize
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// `N (N-1) ... (N-n+1)`.
pub fn falling_factorial(total: usize, n: usize) -> f64 {
    (0..n).map(|k| (total - k) as f64).product()
}

/// Uniform draw of an admissible configuration with Maxwellian momenta.
/// Positions are confined to `[lo, hi]` (fractions of each side) when a
/// sub-region is given.
pub fn sample_point<R: Rng + ?Sized>(
    bx: &BoxSpec,
    n: usize,
    envelope: &GaussianEnvelope,
    region: Option<(f64, f64)>,
    rng: &mut R,
) -> Result<Configuration> {
    let l = bx.lengths();
    for _ in 0..100_000 {
        let states: Vec<ParticleState> = (0..n)
            .map(|_| {
                let q = match region {
                    Some((lo, hi)) => Vec3::from_fn(|d, _| l[d] * (lo + (hi - lo) * rng.random::<f64>())),
                    None => bx.sample_position(rng),
                };
                ParticleState::new(q, envelope.sample(rng))
            })
            .collect();
        if is_admissible(bx, &states) {
            return Ok(Configuration::new(states));
        }
    }
    Err(Error::PackingTooTight { rate: 1.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bx() -> BoxSpec {
        BoxSpec::cube(1.0, 0.1).unwrap()
    }

    fn perturbed(lambda: f64, n: usize) -> InitialMeasure {
        let v = MeasureVariant::PerturbedProduct {
            beta: 1.0,
            lambda,
            wavevector: [1.0, 0.0, 0.0],
            profile: SpatialProfile::Smooth,
        };
        InitialMeasure::calibrate(v, bx(), n, 20_000, 1).unwrap()
    }

    fn st(x: f64, y: f64, z: f64) -> ParticleState {
        ParticleState::new(Vec3::new(x, y, z), Vec3::new(0.3, -0.2, 0.1))
    }

    #[test]
    fn envelope_normalized() {
        let e = GaussianEnvelope::new(2.0).unwrap();
        assert!((e.h(&Vec3::zeros()) - (2.0 / (2.0 * PI)).powf(1.5)).abs() < 1e-15);
        // Radial quadrature of 4 pi p^2 h(p).
        let dp = 1e-3;
        let total: f64 = (0..10_000).map(|i| (i as f64 + 0.5) * dp).map(|p| 4.0 * PI * p * p * e.h(&Vec3::new(p, 0.0, 0.0)) * dp).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn inadmissible_density_vanishes() {
        let m = perturbed(0.3, 2);
        assert_eq!(m.density_f0(&[st(0.5, 0.5, 0.5), st(0.55, 0.5, 0.5)]), 0.0);
        assert_eq!(m.density_f0(&[st(0.5, 0.5, 0.5)]), 0.0);
    }

    #[test]
    fn equilibrium_ignores_positions_and_lambda_zero_matches() {
        let eq = InitialMeasure::calibrate(MeasureVariant::Equilibrium { beta: 1.0 }, bx(), 2, 20_000, 1).unwrap();
        let flat = perturbed(0.0, 2);
        let a = [st(0.2, 0.5, 0.5), st(0.7, 0.3, 0.5)];
        let b = [st(0.4, 0.8, 0.2), st(0.7, 0.3, 0.6)];
        assert!((eq.density_f0(&a) / eq.density_f0(&b) - 1.0).abs() < 1e-14);
        assert_eq!(eq.log_density_unnormalized(&a), flat.log_density_unnormalized(&a));
    }

    #[test]
    fn symmetric_under_relabeling() {
        let m = perturbed(0.3, 3);
        let z = [st(0.2, 0.5, 0.5), st(0.7, 0.3, 0.5), st(0.4, 0.8, 0.2)];
        let r = [z[2], z[0], z[1]];
        assert_eq!(m.log_density_unnormalized(&z), m.log_density_unnormalized(&r));
    }

    #[test]
    fn envelope_bound_holds() {
        let m = perturbed(0.5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = m.envelope_constant();
        for _ in 0..1000 {
            let z = sample_point(&bx(), 2, m.envelope(), None, &mut rng).unwrap();
            let h: f64 = z.states().iter().map(|s| m.envelope().h(&s.p)).product();
            assert!(m.density_f0(z.states()) <= a * h * (1.0 + 1e-12));
        }
    }

    #[test]
    fn full_marginal_is_exact() {
        let m = perturbed(0.3, 2);
        let z = [st(0.2, 0.5, 0.5), st(0.7, 0.3, 0.5)];
        let e = m.rho0_oracle(&z, 10, 0);
        assert_eq!(e.stderr, 0.0);
        assert!((e.value - 2.0 * m.density_f0(&z)).abs() < 1e-15);
        assert_eq!(m.rho0_oracle(&[z[0], z[1], st(0.5, 0.5, 0.2)], 10, 0).value, 0.0);
    }

    #[test]
    fn conditional_acceptance_matches_free_volume() {
        let m = perturbed(0.0, 2);
        let z = [st(0.5, 0.5, 0.5)];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = m.sample_conditional(&z, 1, 20_000, &mut rng).unwrap();
        let acc = s.completions.len() as f64 / s.attempts as f64;
        // Excluded ball of radius a around an interior point, relative to the free cube.
        let expected = 1.0 - (4.0 / 3.0) * PI * 0.1f64.powi(3) / 0.9f64.powi(3);
        let se = (expected * (1.0 - expected) / s.attempts as f64).sqrt();
        assert!((acc - expected).abs() < 4.0 * se, "{acc} vs {expected}");
        let w0 = s.completions[0].1;
        assert!(s.completions.iter().all(|(_, w)| (w - w0).abs() < 1e-12));
        assert!(m.sample_conditional(&z, 0, 3, &mut rng).unwrap().completions.iter().all(|(y, w)| y.is_empty() && *w == 1.0));
    }

    #[test]
    fn packing_too_tight() {
        let tiny = BoxSpec::cube(0.22, 0.1).unwrap();
        let m = InitialMeasure::calibrate(MeasureVariant::Equilibrium { beta: 1.0 }, tiny, 2, 100, 1).unwrap();
        let z = [ParticleState::new(Vec3::new(0.11, 0.11, 0.11), Vec3::zeros())];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(m.sample_conditional(&z, 1, 10, &mut rng), Err(Error::PackingTooTight { .. })));
    }

    #[test]
    fn grand_canonical_normalization_sums_sectors() {
        let v = MeasureVariant::GrandCanonical { beta: 1.0, activity: 2.0, n_max: 3 };
        let m = InitialMeasure::calibrate(v, bx(), 0, 20_000, 5).unwrap();
        let p = &m.normalization().partial;
        assert_eq!(p.len(), 4);
        assert!((p[1] - 0.729).abs() < 1e-12);
        let xi = 1.0 + 2.0 * p[1] + 2.0 * p[2] + 8.0 / 6.0 * p[3];
        assert!((m.normalization().value - xi).abs() < 1e-12);
    }
}
