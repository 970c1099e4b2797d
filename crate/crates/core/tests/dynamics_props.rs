use hardsphere::dynamics::{
    advance, advance_state, backward, is_admissible, resolve_pair_collision, resolve_wall_collision,
};
use hardsphere::{BoxSpec, Configuration, Error, ParticleState, Tolerances, Vec3};
use proptest::prelude::*;

fn vec3(range: f64) -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(-range..range).prop_map(|[x, y, z]| Vec3::new(x, y, z))
}

fn unit() -> impl Strategy<Value = Vec3> {
    vec3(1.0).prop_filter_map("degenerate direction", |v| (v.norm() > 1e-3).then(|| v.normalize()))
}

fn bx() -> BoxSpec {
    BoxSpec::cube(1.0, 0.1).unwrap()
}

/// Admissible configurations of 1 to 4 particles.
fn configuration() -> impl Strategy<Value = Configuration> {
    (1usize..=4)
        .prop_flat_map(|n| prop::collection::vec((prop::array::uniform3(0.05..0.95f64), vec3(2.5)), n))
        .prop_map(|v| {
            Configuration::new(v.into_iter().map(|(q, p)| ParticleState::new(Vec3::new(q[0], q[1], q[2]), p)).collect())
        })
        .prop_filter("overlap", |c| is_admissible(&bx(), c.states()))
}

fn close(a: &Configuration, b: &Configuration, tol: f64) -> bool {
    a.states().iter().zip(b.states()).all(|(x, y)| (x.q - y.q).amax() <= tol && (x.p - y.p).amax() <= tol * (1.0 + x.p.amax()))
}

proptest! {
    #[test]
    fn pair_collision_conserves_and_reverses(pi in vec3(3.0), pj in vec3(3.0), omega in unit()) {
        prop_assume!(omega.dot(&(pi - pj)) < -1e-6);
        let (qi, qj) = resolve_pair_collision(pi, pj, omega).unwrap();
        let scale = pi.amax() + pj.amax();
        prop_assert!(((pi + pj) - (qi + qj)).amax() <= 8.0 * f64::EPSILON * scale);
        let e0 = pi.norm_squared() + pj.norm_squared();
        prop_assert!((qi.norm_squared() + qj.norm_squared() - e0).abs() <= 1e-14 * e0);
        // Outgoing afterwards; reversing time and colliding again restores the input.
        prop_assert!(omega.dot(&(qi - qj)) > 0.0);
        let (ri, rj) = resolve_pair_collision(-qi, -qj, omega).unwrap();
        prop_assert!((ri + pi).amax() <= 1e-14 * scale && (rj + pj).amax() <= 1e-14 * scale);
    }

    #[test]
    fn wall_collision_is_a_reflection(p in vec3(3.0), axis in 0usize..3, upper: bool) {
        let mut n = Vec3::zeros();
        n[axis] = if upper { -1.0 } else { 1.0 };
        prop_assume!(n.dot(&p) < -1e-6);
        let r = resolve_wall_collision(p, n, 1e-9).unwrap();
        prop_assert_eq!(r.norm_squared(), p.norm_squared());
        prop_assert_eq!(r[axis], -p[axis]);
        prop_assert!(resolve_wall_collision(r, n, 1e-9).is_err());
    }

    #[test]
    fn flow_conserves_energy_and_reverses(c in configuration(), t in 0.0..1.5f64) {
        let tol = Tolerances::default();
        let Ok((end, _)) = advance(&bx(), &c, t, &tol) else { return Ok(()) };
        prop_assert!(is_admissible(&bx(), end.states()));
        let e0 = c.kinetic_energy();
        prop_assert!((end.kinetic_energy() - e0).abs() <= 1e-12 * e0.max(1e-300));
        let back = backward(&bx(), &end, t, &tol);
        prop_assume!(back.is_ok());
        prop_assert!(close(&back.unwrap(), &c, 1e-8));
    }

    #[test]
    fn flow_composes(c in configuration(), t1 in 0.0..1.0f64, t2 in 0.0..1.0f64) {
        let tol = Tolerances::default();
        let (Ok(whole), Ok(half)) = (advance_state(&bx(), &c, t1 + t2, &tol), advance_state(&bx(), &c, t1, &tol)) else {
            return Ok(());
        };
        let Ok(split) = advance_state(&bx(), &half, t2, &tol) else { return Ok(()) };
        prop_assert!(close(&whole, &split, 1e-8));
    }

    #[test]
    fn relabeling_commutes_with_the_flow(c in configuration(), t in 0.0..1.0f64) {
        let tol = Tolerances::default();
        let Ok(end) = advance_state(&bx(), &c, t, &tol) else { return Ok(()) };
        let mut rev: Vec<ParticleState> = c.states().to_vec();
        rev.reverse();
        let Ok(end_rev) = advance_state(&bx(), &Configuration::new(rev), t, &tol) else { return Ok(()) };
        let mut back = end_rev.into_states();
        back.reverse();
        prop_assert!(close(&end, &Configuration::new(back), 1e-9));
    }
}

#[test]
fn total_momentum_changes_only_at_walls() {
    // Two spheres far from the walls colliding head-on.
    let c = Configuration::new(vec![
        ParticleState::new(Vec3::new(0.3, 0.5, 0.5), Vec3::new(1.0, 0.1, 0.0)),
        ParticleState::new(Vec3::new(0.6, 0.52, 0.5), Vec3::new(-0.5, 0.0, 0.0)),
    ]);
    let (end, log) = advance(&bx(), &c, 0.15, &Tolerances::default()).unwrap();
    assert_eq!(log.len(), 1);
    assert!((end.total_momentum() - c.total_momentum()).amax() < 1e-15);
}

#[test]
fn negative_duration_is_rejected() {
    let c = Configuration::new(vec![ParticleState::new(Vec3::new(0.5, 0.5, 0.5), Vec3::zeros())]);
    assert!(matches!(advance(&bx(), &c, -1.0, &Tolerances::default()), Err(Error::InvalidInput(_))));
    assert!(matches!(backward(&bx(), &c, -1.0, &Tolerances::default()), Err(Error::InvalidInput(_))));
}
