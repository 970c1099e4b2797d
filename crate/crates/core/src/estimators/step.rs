//! Integration step: integrating a tree value with `n+1` roots over the last
//! root particle equals a signed combination of tree values with `n` roots.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::rho::{tree_draw, tree_value};
use super::{Estimate, ExperimentSpec};
use crate::dynamics::{is_admissible, ParticleState};
use crate::error::{Error, Result};
use crate::rng::{run_blocks, Draw, Rejection};
use crate::trees::Tree;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTerm {
    pub tree: Tree,
    pub multiplicity: usize,
    pub estimate: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepComparison {
    pub source: Tree,
    pub lhs: Estimate,
    pub rhs: Estimate,
    pub terms: Vec<StepTerm>,
}

impl StepComparison {
    pub fn z_score(&self) -> f64 {
        self.lhs.z_score(&self.rhs)
    }
}

/// Trees on the right of the identity for `source` (with `n+1` roots), grouped
/// with their integer multiplicities. Terms with multiplicity 0 are dropped.
pub fn rewrite_terms(source: &Tree, total: usize) -> Result<Vec<(Tree, usize)>> {
    if source.n() < 2 {
        return Err(Error::InvalidInput("the source tree needs at least two root lines".into()));
    }
    let n = source.n() - 1;
    let m = source.m();
    let mut terms: BTreeMap<Tree, usize> = BTreeMap::new();
    if source.ell() == m + 1 && total > n + m {
        *terms.entry(source.discard_trivial()?).or_default() += total - n - m;
    }
    for k in 1..=source.ell() {
        for i in 1..=n + k - 1 {
            *terms.entry(source.attach(k, i)?).or_default() += 1;
        }
    }
    Ok(terms.into_iter().collect())
}

/// Both sides of the integration-step identity at the spec's `z_n` and `t`.
/// The left side integrates `z_{n+1}` over positions uniform in the free box
/// and Maxwellian momenta.
pub fn verify_integration_step(source: &Tree, spec: &ExperimentSpec) -> Result<StepComparison> {
    spec.validate()?;
    let n = spec.n();
    if source.n() != n + 1 {
        return Err(Error::InvalidInput(format!(
            "source tree has {} roots, expected {} for a point with {n} particles",
            source.n(),
            n + 1
        )));
    }
    let measure = &spec.measure;
    let bx = spec.bx();
    let lhs = if n + 1 + source.m() > spec.total() {
        Estimate::exact(0.0, spec.seed)
    } else {
        let env = measure.envelope();
        let log_v = bx.free_volume().ln();
        let label = spec.label(&format!("step-lhs {source}"));
        let acc = run_blocks(spec.seed, &label, spec.samples, 1, spec.chunk, |rng| {
            let extra = ParticleState::new(bx.sample_position(rng), env.sample(rng));
            let z1 = spec.point.extended(&[extra]);
            if !is_admissible(bx, z1.states()) {
                return Draw::Rejected(Rejection::Domain);
            }
            match tree_draw(measure, &z1, spec.t, source, &spec.tol, rng) {
                Draw::Value(v) => Draw::Value(vec![v[0] * (log_v - env.log_h(&extra.p)).exp()]),
                r => r,
            }
        });
        Estimate::from_accumulator(&acc, 0, spec.seed)
    };
    let mut terms = Vec::new();
    for (tree, multiplicity) in rewrite_terms(source, spec.total())? {
        let estimate = tree_value(&tree, spec)?;
        terms.push(StepTerm { tree, multiplicity, estimate });
    }
    let rhs = Estimate::weighted_sum(terms.iter().map(|t| (t.tree.to_string(), t.multiplicity, &t.estimate)), spec.seed);
    Ok(StepComparison { source: source.clone(), lhs, rhs, terms })
}
