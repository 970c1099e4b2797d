//! Correlation functions at time `t`: by direct marginalization of the
//! backward-evolved `N`-particle density, tree by tree, and as the finite sum
//! over all trees.

use rand::Rng;

use super::{unit_vector, Estimate, ExperimentSpec, SPHERE_AREA};
use crate::densities::{factorial, falling_factorial, InitialMeasure};
use crate::dynamics::{backward, is_admissible, Configuration, Tolerances};
use crate::error::{Error, Result};
use crate::histories::{build_history, HistoryStatus, NodeVar, RejectReason};
use crate::rng::{run_blocks, Draw, Rejection};
use crate::trees::{enumerate_trees, Tree, DEFAULT_ENUMERATION_CAP};

/// Node variables drawn from the fixed proposal (ordered uniform times,
/// uniform directions, Maxwellian momenta) with the log of the inverse
/// proposal density.
pub(crate) fn sample_nodes<R: Rng + ?Sized>(
    measure: &InitialMeasure,
    m: usize,
    t: f64,
    rng: &mut R,
) -> (Vec<NodeVar>, f64) {
    let mut times: Vec<f64> = (0..m).map(|_| t * rng.random::<f64>()).collect();
    times.sort_by(|a, b| b.total_cmp(a));
    let env = measure.envelope();
    let mut log_w = m as f64 * (t.ln() + SPHERE_AREA.ln()) - factorial(m).ln();
    let nodes = times
        .into_iter()
        .map(|t| {
            let omega = unit_vector(rng);
            let p_hat = env.sample(rng);
            log_w -= env.log_h(&p_hat);
            NodeVar { t, omega, p_hat }
        })
        .collect();
    (nodes, log_w)
}

pub(crate) fn rejection_of(status: HistoryStatus) -> Rejection {
    match status {
        HistoryStatus::Rejected(RejectReason::SingularFlow | RejectReason::EventCapExceeded) => Rejection::Singular,
        _ => Rejection::Domain,
    }
}

/// One draw of the value of `tree` at `(z, t)`: history weight times a fused
/// single-completion draw of `rho^0_{n+m}` at the history's final state.
pub(crate) fn tree_draw<R: Rng + ?Sized>(
    measure: &InitialMeasure,
    z: &Configuration,
    t: f64,
    tree: &Tree,
    tol: &Tolerances,
    rng: &mut R,
) -> Draw {
    let m = tree.m();
    if tree.n() + m > measure.particles() || (m > 0 && t == 0.0) {
        return Draw::Value(vec![0.0]);
    }
    let bx = measure.box_spec();
    let zeta0 = if m == 0 {
        match backward(bx, z, t, tol) {
            Ok(c) => c,
            Err(e) => return Draw::Rejected(Rejection::from(&e)),
        }
    } else {
        let (nodes, log_w) = sample_nodes(measure, m, t, rng);
        let h = match build_history(bx, z, t, tree, &nodes, tol) {
            Ok(h) => h,
            // Coincident node times; a null set of the proposal.
            Err(_) => return Draw::Rejected(Rejection::Domain),
        };
        if !h.is_valid() {
            return Draw::Rejected(rejection_of(h.status));
        }
        let b = h.weight();
        let Some(log_rho) = measure.log_rho0_draw(h.final_configuration().expect("valid").states(), rng) else {
            return Draw::Rejected(Rejection::Domain);
        };
        return Draw::Value(vec![b.signum() * (b.abs().ln() + log_w + log_rho).exp()]);
    };
    match measure.log_rho0_draw(zeta0.states(), rng) {
        Some(l) => Draw::Value(vec![l.exp()]),
        None => Draw::Rejected(Rejection::Domain),
    }
}

/// One draw of `rho_n(z, t)` by direct marginalization.
pub(crate) fn direct_draw<R: Rng + ?Sized>(
    measure: &InitialMeasure,
    z: &Configuration,
    t: f64,
    tol: &Tolerances,
    rng: &mut R,
) -> Draw {
    if z.len() > measure.particles() {
        return Draw::Value(vec![0.0]);
    }
    let c = measure.propose_completion(z.len(), rng);
    let full = z.extended(&c.states);
    if !is_admissible(measure.box_spec(), full.states()) {
        return Draw::Rejected(Rejection::Domain);
    }
    let back = match backward(measure.box_spec(), &full, t, tol) {
        Ok(b) => b,
        Err(e) => return Draw::Rejected(Rejection::from(&e)),
    };
    match measure.log_density_f0(back.states()) {
        Some(l) => Draw::Value(vec![c.combinatorial * (l - c.log_proposal).exp()]),
        None => Draw::Rejected(Rejection::Domain),
    }
}

fn check_point(spec: &ExperimentSpec, n: usize) -> Result<()> {
    spec.validate()?;
    if spec.n() != n {
        return Err(Error::InvalidInput(format!("tree has {n} roots but the point has {} particles", spec.n())));
    }
    Ok(())
}

/// Value of `tree` at the spec's point and time.
pub fn tree_value(tree: &Tree, spec: &ExperimentSpec) -> Result<Estimate> {
    check_point(spec, tree.n())?;
    let (n, m) = (tree.n(), tree.m());
    if n + m > spec.total() || (m > 0 && spec.t == 0.0) {
        return Ok(Estimate::exact(0.0, spec.seed));
    }
    let measure = &spec.measure;
    if m == 0 && !measure.is_grand_canonical() && n == spec.total() {
        let zeta0 = backward(spec.bx(), &spec.point, spec.t, &spec.tol)?;
        return Ok(Estimate::exact(falling_factorial(n, n) * measure.density_f0(zeta0.states()), spec.seed));
    }
    let label = spec.label(&format!("tree {tree}"));
    let acc = run_blocks(spec.seed, &label, spec.samples, 1, spec.chunk, |rng| {
        tree_draw(measure, &spec.point, spec.t, tree, &spec.tol, rng)
    });
    Ok(Estimate::from_accumulator(&acc, 0, spec.seed))
}

/// All trees that can contribute at root count `n`.
pub(crate) fn contributing_trees(n: usize, total: usize) -> Result<Vec<Tree>> {
    let mut out = Vec::new();
    for m in 0..=total.saturating_sub(n) {
        out.extend(enumerate_trees(n, m, DEFAULT_ENUMERATION_CAP)?);
    }
    Ok(out)
}

/// Sum of all tree values, with one breakdown term per tree.
pub fn rho_series(spec: &ExperimentSpec) -> Result<Estimate> {
    spec.validate()?;
    if spec.n() > spec.total() {
        return Ok(Estimate::exact(0.0, spec.seed));
    }
    let trees = contributing_trees(spec.n(), spec.total())?;
    let values = trees.iter().map(|t| tree_value(t, spec)).collect::<Result<Vec<_>>>()?;
    Ok(Estimate::weighted_sum(trees.iter().zip(&values).map(|(t, e)| (t.to_string(), 1, e)), spec.seed))
}

/// `rho_n(z, t)` by marginalizing the backward-evolved `N`-particle density.
pub fn rho_direct(spec: &ExperimentSpec) -> Result<Estimate> {
    spec.validate()?;
    let measure = &spec.measure;
    let n = spec.n();
    if n > spec.total() {
        return Ok(Estimate::exact(0.0, spec.seed));
    }
    if !measure.is_grand_canonical() && n == spec.total() {
        let back = backward(spec.bx(), &spec.point, spec.t, &spec.tol)?;
        return Ok(Estimate::exact(falling_factorial(n, n) * measure.density_f0(back.states()), spec.seed));
    }
    let label = spec.label("direct");
    let acc = run_blocks(spec.seed, &label, spec.samples, 1, spec.chunk, |rng| {
        direct_draw(measure, &spec.point, spec.t, &spec.tol, rng)
    });
    Ok(Estimate::from_accumulator(&acc, 0, spec.seed))
}
