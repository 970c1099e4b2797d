use hardsphere::densities::sample_point;
use hardsphere::dynamics::is_admissible;
use hardsphere::rng::{run_blocks, Draw};
use hardsphere::{BoxSpec, InitialMeasure, MeasureVariant, ParticleState, SpatialProfile, Vec3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bx() -> BoxSpec {
    BoxSpec::cube(1.0, 0.1).unwrap()
}

fn perturbed(lambda: f64, profile: SpatialProfile) -> MeasureVariant {
    MeasureVariant::PerturbedProduct { beta: 1.0, lambda, wavevector: [1.0, 2.0, 0.0], profile }
}

fn calibrated(v: MeasureVariant, n: usize) -> InitialMeasure {
    InitialMeasure::calibrate(v, bx(), n, 20_000, 1).unwrap()
}

fn draw_states(n: usize, seed: u64) -> Vec<ParticleState> {
    let m = calibrated(MeasureVariant::Equilibrium { beta: 1.0 }, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_point(&bx(), n, m.envelope(), None, &mut rng).unwrap().into_states()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn density_is_symmetric_and_enveloped(seed in any::<u64>(), rough: bool) {
        let profile = if rough { SpatialProfile::Rough } else { SpatialProfile::Smooth };
        let m = calibrated(perturbed(0.4, profile), 3);
        let z = draw_states(3, seed);
        let f = m.density_f0(&z);
        let mut perm = z.clone();
        perm.rotate_left(1);
        // Relabeling only reorders floating-point sums.
        prop_assert!((m.density_f0(&perm) - f).abs() <= 1e-14 * f);
        let bound: f64 = m.envelope_constant() * z.iter().map(|s| m.envelope().h(&s.p)).product::<f64>();
        prop_assert!(f > 0.0 && f <= bound * (1.0 + 1e-12));
    }

    #[test]
    fn zero_perturbation_is_equilibrium(seed in any::<u64>()) {
        let z = draw_states(2, seed);
        let eq = calibrated(MeasureVariant::Equilibrium { beta: 1.0 }, 2);
        let flat = calibrated(perturbed(0.0, SpatialProfile::Smooth), 2).with_normalization(eq.normalization().clone());
        prop_assert_eq!(flat.density_f0(&z), eq.density_f0(&z));
    }
}

#[test]
fn inadmissible_configurations_have_zero_density() {
    let m = calibrated(MeasureVariant::Equilibrium { beta: 1.0 }, 2);
    let overlap = [
        ParticleState::new(Vec3::new(0.5, 0.5, 0.5), Vec3::zeros()),
        ParticleState::new(Vec3::new(0.55, 0.5, 0.5), Vec3::zeros()),
    ];
    assert_eq!(m.density_f0(&overlap), 0.0);
    assert!(m.log_density_f0(&overlap).is_none());
    // Equilibrium ignores positions otherwise.
    let a = [
        ParticleState::new(Vec3::new(0.2, 0.5, 0.5), Vec3::new(0.1, 0.0, 0.0)),
        ParticleState::new(Vec3::new(0.7, 0.5, 0.5), Vec3::zeros()),
    ];
    let b = [
        ParticleState::new(Vec3::new(0.3, 0.3, 0.8), Vec3::new(0.1, 0.0, 0.0)),
        ParticleState::new(Vec3::new(0.7, 0.7, 0.2), Vec3::zeros()),
    ];
    assert!((m.density_f0(&a) - m.density_f0(&b)).abs() < 1e-15 * m.density_f0(&a));
}

/// Acceptance of single-particle completions against an independent estimate
/// of the free-volume fraction around the fixed particles.
#[test]
fn conditional_acceptance_matches_free_volume() {
    let m = calibrated(MeasureVariant::Equilibrium { beta: 1.0 }, 3);
    let z = [
        ParticleState::new(Vec3::new(0.3, 0.3, 0.3), Vec3::zeros()),
        ParticleState::new(Vec3::new(0.5, 0.3, 0.3), Vec3::zeros()),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s = m.sample_conditional(&z, 1, 50_000, &mut rng).unwrap();
    let accepted = s.completions.len() as f64 / s.attempts as f64;
    let w0 = s.completions[0].1;
    assert!(s.completions.iter().all(|(_, w)| *w == w0));
    // Geometric oracle: uniform points in the centre region, distance test only.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let trials = 200_000;
    let free = (0..trials)
        .filter(|_| {
            let q = Vec3::from_fn(|_, _| 0.05 + 0.9 * rng.random::<f64>());
            z.iter().all(|s| (s.q - q).norm() >= 0.1)
        })
        .count() as f64
        / trials as f64;
    let se = (free * (1.0 - free) / trials as f64).sqrt() + (accepted * (1.0 - accepted) / s.attempts as f64).sqrt();
    assert!((accepted - free).abs() < 3.0 * se, "{accepted} vs {free}");
    // The same count in closed form: two overlapping excluded balls.
    let ball = 4.0 / 3.0 * std::f64::consts::PI * 0.1f64.powi(3);
    let lens = std::f64::consts::PI / 12.0 * (4.0 * 0.1 + 0.2) * (2.0 * 0.1 - 0.2f64).powi(2);
    let exact = 1.0 - (2.0 * ball - lens) / 0.9f64.powi(3);
    assert!((free - exact).abs() < 3.0 * (exact * (1.0 - exact) / trials as f64).sqrt());
}

#[test]
fn empty_completion_carries_the_spatial_weight_only() {
    let m = calibrated(perturbed(0.3, SpatialProfile::Smooth), 1);
    let z = [ParticleState::new(Vec3::new(0.4, 0.4, 0.4), Vec3::zeros())];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = m.sample_conditional(&z, 0, 3, &mut rng).unwrap();
    assert_eq!(s.completions.len(), 3);
    assert!(s.completions.iter().all(|(y, w)| y.is_empty() && *w == 1.0));
    assert_eq!(s.rejected, 0);
}

/// Ideal-gas limit at small diameter: `rho_1^0 ~ (N / |free box|) h(p)`.
#[test]
fn one_particle_correlation_in_a_dilute_gas() {
    let small = BoxSpec::cube(1.0, 0.02).unwrap();
    let m = InitialMeasure::calibrate(MeasureVariant::Equilibrium { beta: 1.0 }, small, 3, 50_000, 3).unwrap();
    let z = [ParticleState::new(Vec3::new(0.5, 0.4, 0.6), Vec3::new(0.3, -0.2, 0.9))];
    let est = m.rho0_oracle(&z, 100_000, 8);
    let ideal = 3.0 / small.free_volume() * m.envelope().h(&z[0].p);
    assert!((est.value - ideal).abs() < 3.0 * est.stderr + 1e-3 * ideal, "{} ± {} vs {ideal}", est.value, est.stderr);
}

/// `int rho_1^0 / N = 1` over the one-particle phase space.
#[test]
fn one_particle_correlation_is_normalized() {
    for v in [perturbed(0.5, SpatialProfile::Smooth), perturbed(0.5, SpatialProfile::Rough)] {
        let m = InitialMeasure::calibrate(v, bx(), 3, 100_000, 11).unwrap();
        let vol = bx().free_volume();
        let acc = run_blocks(12, "norm-check", 100_000, 1, 1, |rng| {
            let z = [ParticleState::new(bx().sample_position(rng), m.envelope().sample(rng))];
            match m.rho0_draw(&z, rng) {
                Draw::Value(x) => Draw::Value(vec![x[0] * vol / m.envelope().h(&z[0].p) / 3.0]),
                r => r,
            }
        });
        let err = acc.stderr(0).hypot(m.normalization().rel_stderr());
        assert!((acc.mean(0) - 1.0).abs() < 3.0 * err, "{} ± {err}", acc.mean(0));
    }
}

#[test]
fn grand_canonical_rho1_is_flat_without_perturbation() {
    let v = MeasureVariant::GrandCanonical { beta: 1.0, activity: 3.0, n_max: 4 };
    let m = InitialMeasure::calibrate(v, bx(), 0, 50_000, 2).unwrap();
    let p = Vec3::new(0.2, 0.1, -0.3);
    // Both points sit further than one diameter inside the centre region.
    let za = [ParticleState::new(Vec3::new(0.5, 0.5, 0.5), p)];
    let zb = [ParticleState::new(Vec3::new(0.2, 0.7, 0.35), p)];
    assert!(is_admissible(&bx(), &za) && is_admissible(&bx(), &zb));
    let a = m.rho0_oracle(&za, 100_000, 1);
    let b = m.rho0_oracle(&zb, 100_000, 2);
    assert!(a.agrees_with(&b, 3.0), "{a:?} {b:?}");
    // Beyond n_max the correlation is an exact zero.
    let z: Vec<ParticleState> = (0..5).map(|i| ParticleState::new(Vec3::new(0.1 + 0.2 * i as f64, 0.5, 0.5), p)).collect();
    assert_eq!(m.rho0_oracle(&z, 10, 1).value, 0.0);
}
