//! Collision operator and the integrated (mild) hierarchy along the
//! `n`-particle flow.

use serde::{Deserialize, Serialize};

use super::rho::{contributing_trees, direct_draw, rho_series, tree_draw};
use super::{unit_vector, Estimate, ExperimentSpec, InnerEstimator, SPHERE_AREA};
use crate::dynamics::{advance_state, is_admissible, ParticleState};
use crate::error::{Error, Result};
use crate::rng::{run_blocks, Draw, Rejection};

/// `(Q rho_{n+1})(z_n, t)`: a uniform progenitor `j`, a uniform direction and a
/// Maxwellian momentum for the added particle, weighted by
/// `a^2 omega . (p_hat - p_j)`, times one draw of `rho_{n+1}` at the contact
/// configuration.
pub fn collision_operator(spec: &ExperimentSpec, inner: InnerEstimator) -> Result<Estimate> {
    spec.validate()?;
    let n = spec.n();
    if n + 1 > spec.total() {
        return Ok(Estimate::exact(0.0, spec.seed));
    }
    let measure = &spec.measure;
    let bx = spec.bx();
    let a = bx.diameter();
    let env = measure.envelope();
    let trees = match inner {
        InnerEstimator::Series => contributing_trees(n + 1, spec.total())?,
        InnerEstimator::Direct => Vec::new(),
    };
    let label = spec.label(match inner {
        InnerEstimator::Direct => "collision direct",
        InnerEstimator::Series => "collision series",
    });
    let acc = run_blocks(spec.seed, &label, spec.samples, 1, spec.chunk, |rng| {
        use rand::Rng;
        let j = rng.random_range(0..n);
        let omega = unit_vector(rng);
        let p_hat = env.sample(rng);
        let pj = spec.point.states()[j];
        let z1 = spec.point.extended(&[ParticleState::new(pj.q + omega * a, p_hat)]);
        if !is_admissible(bx, z1.states()) {
            return Draw::Rejected(Rejection::Domain);
        }
        let factor = n as f64 * SPHERE_AREA * a * a * omega.dot(&(p_hat - pj.p)) * (-env.log_h(&p_hat)).exp();
        let inner_value = match inner {
            InnerEstimator::Direct => match direct_draw(measure, &z1, spec.t, &spec.tol, rng) {
                Draw::Value(v) => v[0],
                r => return r,
            },
            InnerEstimator::Series => trees
                .iter()
                .map(|tree| match tree_draw(measure, &z1, spec.t, tree, &spec.tol, rng) {
                    Draw::Value(v) => v[0],
                    Draw::Rejected(_) => 0.0,
                })
                .sum(),
        };
        Draw::Value(vec![factor * inner_value])
    });
    Ok(Estimate::from_accumulator(&acc, 0, spec.seed))
}

/// Residual of the integrated hierarchy at one grid time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BbgkyPoint {
    pub t: f64,
    /// `rho_n(T_t z, t) - rho_n(z, 0)`.
    pub lhs: Estimate,
    /// Trapezoid integral of the collision operator along the flow, on the grid.
    pub rhs: Estimate,
    /// Same integral on the grid refined by midpoints.
    pub rhs_refined: f64,
    /// `(4/3) |rhs - rhs_refined|`, the extrapolated error of the coarse rule.
    pub quadrature_bound: f64,
    pub residual: f64,
    pub stderr: f64,
}

impl BbgkyPoint {
    /// `|residual| <= nsigma (stderr + quadrature bound)`.
    pub fn passes(&self, nsigma: f64) -> bool {
        self.residual.abs() <= nsigma * (self.stderr + self.quadrature_bound)
    }
}

/// Checks `rho_n(T_t z, t) - rho_n(z, 0) = int_0^t (Q rho_{n+1})(T_s z, s) ds` at
/// every time of `grid` (ascending, positive), with both correlation functions
/// from the tree series and the time integral by the trapezoid rule on
/// `{0} U grid`.
pub fn bbgky_residual(spec: &ExperimentSpec, grid: &[f64], inner: InnerEstimator) -> Result<Vec<BbgkyPoint>> {
    spec.validate()?;
    if grid.is_empty() || grid.windows(2).any(|w| !(w[0] < w[1])) || !(grid[0] >= 0.0) {
        return Err(Error::InvalidInput("time grid must be ascending and non-negative".into()));
    }
    let z = &spec.point;
    let bx = spec.bx();
    let rho_at = |t: f64| -> Result<Estimate> {
        let zt = advance_state(bx, z, t, &spec.tol)?;
        rho_series(&spec.at(zt, t))
    };
    let q_at = |t: f64| -> Result<Estimate> {
        let zt = advance_state(bx, z, t, &spec.tol)?;
        collision_operator(&spec.at(zt, t), inner)
    };
    let rho0 = rho_at(0.0)?;
    let mut nodes = vec![0.0];
    nodes.extend(grid.iter().copied().filter(|&t| t > 0.0));
    let q_nodes = nodes.iter().map(|&t| q_at(t)).collect::<Result<Vec<_>>>()?;
    let q_mid = nodes.windows(2).map(|w| q_at(0.5 * (w[0] + w[1]))).collect::<Result<Vec<_>>>()?;

    let mut out = Vec::with_capacity(grid.len());
    if grid[0] == 0.0 {
        let zero = Estimate::exact(0.0, spec.seed);
        out.push(BbgkyPoint {
            t: 0.0,
            lhs: zero.clone(),
            rhs: zero,
            rhs_refined: 0.0,
            quadrature_bound: 0.0,
            residual: 0.0,
            stderr: 0.0,
        });
    }
    let (mut coarse, mut fine) = (0.0, 0.0);
    // Coarse trapezoid weights accumulate per node, so variances are tracked by node.
    let mut weights = vec![0.0; nodes.len()];
    for g in 1..nodes.len() {
        let h = nodes[g] - nodes[g - 1];
        let (qa, qb, qm) = (&q_nodes[g - 1], &q_nodes[g], &q_mid[g - 1]);
        coarse += 0.5 * h * (qa.value + qb.value);
        fine += 0.25 * h * (qa.value + 2.0 * qm.value + qb.value);
        weights[g - 1] += 0.5 * h;
        weights[g] += 0.5 * h;
        let coarse_var: f64 = weights.iter().zip(&q_nodes).map(|(w, q)| (w * q.stderr).powi(2)).sum();
        let lhs = rho_at(nodes[g])?.minus(&rho0);
        let rhs = Estimate { value: coarse, stderr: coarse_var.sqrt(), ..Estimate::exact(0.0, spec.seed) };
        let residual = lhs.value - rhs.value;
        let stderr = lhs.stderr.hypot(rhs.stderr);
        out.push(BbgkyPoint {
            t: nodes[g],
            lhs,
            rhs,
            rhs_refined: fine,
            quadrature_bound: 4.0 / 3.0 * (coarse - fine).abs(),
            residual,
            stderr,
        });
    }
    Ok(out)
}
