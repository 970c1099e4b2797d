//! Cancellation between recollisions and creations.
//!
//! For a source tree with `n+1` roots, every attached tree `attach(source, k, i)`
//! is sampled and its node `k` (the attached creation) is classified. Draws
//! where the created particle recollides in the backward flow are mapped to
//! partner histories in which that recollision is a creation; the partner's
//! integrand, times the Jacobian `|B_k| / B_new` of the change of node
//! variables, is the negative of the original. Summed over all attachments the
//! recollision-restricted values cancel.

use serde::{Deserialize, Serialize};

use super::rho::sample_nodes;
use super::{Estimate, ExperimentSpec};
use crate::dynamics::{BoxSpec, Tolerances};
use crate::error::{Error, Result};
use crate::histories::{build_history, move_label, Direction, History, RecollisionRecord};
use crate::rng::{run_blocks, Draw, Rejection};
use crate::trees::Tree;

/// Relative tolerance of the per-draw checks.
pub const PAIR_TOLERANCE: f64 = 1e-9;

const DIM: usize = 9;
const R_MINUS: usize = 0;
const R_PLUS: usize = 1;
const R_BOTH: usize = 2;
const COUNT: usize = 3;
const ANTISYM: usize = 4;
const FAILED: usize = 5;
const ROUND_TRIP: usize = 6;
const SHARED: usize = 7;
const TIES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CancellationReport {
    pub source: Tree,
    /// Draws whose attached creation recollides in the backward flow.
    pub r_minus_samples: u64,
    /// Of those, draws whose partner integrand cancels the original.
    pub antisymmetric: u64,
    /// Partner construction failures, invalid partners or unexpected partner trees.
    pub partner_failures: u64,
    /// Draws for which the inverse map restores the original node variables.
    pub round_trips: u64,
    /// Draws whose partner reaches the same configuration at time 0.
    pub shared_final: u64,
    /// Draws rejected because a recollision ties with another event time.
    pub tolerance_rejections: u64,
    pub r_minus: Estimate,
    pub r_plus: Estimate,
    /// Sum of both restricted values over all attachments; zero in expectation.
    pub summed: Estimate,
}

impl CancellationReport {
    /// Fraction of recollision draws passing the per-draw anti-symmetry check.
    pub fn antisymmetric_fraction(&self) -> f64 {
        if self.r_minus_samples == 0 {
            0.0
        } else {
            self.antisymmetric as f64 / self.r_minus_samples as f64
        }
    }
}

fn close(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= PAIR_TOLERANCE * scale.max(f64::MIN_POSITIVE)
}

fn nodes_match(a: &History, b: &History) -> bool {
    a.tree == b.tree
        && a.nodes.iter().zip(&b.nodes).all(|(x, y)| {
            close(x.t, y.t, x.t)
                && (x.omega - y.omega).norm() <= PAIR_TOLERANCE
                && (x.p_hat - y.p_hat).norm() <= PAIR_TOLERANCE * (1.0 + x.p_hat.norm())
        })
}

struct PairCheck {
    antisymmetric: bool,
    round_trip: bool,
    shared: bool,
}

/// Builds the partner of an R- draw and runs the per-draw checks. `None` marks a
/// failed construction or a partner outside the expected attachment.
fn check_partner(
    bx: &BoxSpec,
    source: &Tree,
    h: &History,
    rec: &RecollisionRecord,
    log_rho: &dyn Fn(&History) -> Option<f64>,
    tol: &Tolerances,
) -> Option<PairCheck> {
    let (p, slot) = h.cancellation_partner(bx, rec, tol).ok()?;
    if !p.is_valid() || slot > source.ell() {
        return None;
    }
    let i_new = p.tree.j(slot);
    if source.attach(slot, i_new).ok()? != p.tree {
        return None;
    }
    let k = rec.node;
    let b_new = p.b_factors[slot - 1];
    let jac = h.b_factors[k - 1].abs() / b_new;
    let (lh, lp) = (log_rho(h)?, log_rho(&p)?);
    let wh = h.weight() * lh.exp();
    let wp = p.weight() * lp.exp();
    let antisymmetric = b_new > 0.0 && close(wh, -jac * wp, wh.abs());

    let (c, c_new) = (h.n() + k, h.n() + slot);
    let (fh, fp) = (h.final_configuration()?, p.final_configuration()?);
    let shared = fh.states().iter().enumerate().all(|(idx, s)| {
        let o = &fp.states()[move_label(idx + 1, c, c_new) - 1];
        (s.q - o.q).norm() <= PAIR_TOLERANCE && (s.p - o.p).norm() <= PAIR_TOLERANCE * (1.0 + s.p.norm())
    });

    let round_trip = match p.detect_recollision(bx, slot, tol) {
        Ok(Some(back)) if back.direction == Direction::Forward => {
            p.cancellation_partner(bx, &back, tol).map(|(hh, kk)| kk == k && nodes_match(h, &hh)).unwrap_or(false)
        }
        _ => false,
    };
    Some(PairCheck { antisymmetric, round_trip, shared })
}

/// Samples every attachment of `source` with `spec.samples` draws each and
/// tests the recollision/creation cancellation.
pub fn verify_cancellation(source: &Tree, spec: &ExperimentSpec) -> Result<CancellationReport> {
    spec.validate()?;
    let n = spec.n();
    if source.n() != n + 1 {
        return Err(Error::InvalidInput(format!("source tree needs {} roots, has {}", n + 1, source.n())));
    }
    if !(spec.t > 0.0) {
        return Err(Error::InvalidInput("cancellation needs a positive time".into()));
    }
    let measure = &spec.measure;
    let bx = spec.bx();
    let tol = &spec.tol;
    let mut report = CancellationReport {
        source: source.clone(),
        r_minus_samples: 0,
        antisymmetric: 0,
        partner_failures: 0,
        round_trips: 0,
        shared_final: 0,
        tolerance_rejections: 0,
        r_minus: Estimate::exact(0.0, spec.seed),
        r_plus: Estimate::exact(0.0, spec.seed),
        summed: Estimate::exact(0.0, spec.seed),
    };
    let mut minus_terms = Vec::new();
    let mut plus_terms = Vec::new();
    let mut both_terms = Vec::new();
    for k in 1..=source.ell() {
        for i in 1..=n + k - 1 {
            let tree = source.attach(k, i)?;
            if tree.n() + tree.m() > spec.total() {
                continue;
            }
            let label = spec.label(&format!("cancel {source} {k} {i}"));
            let acc = run_blocks(spec.seed, &label, spec.samples, DIM, spec.chunk, |rng| {
                let (nodes, log_w) = sample_nodes(measure, tree.m(), spec.t, rng);
                let Ok(h) = build_history(bx, &spec.point, spec.t, &tree, &nodes, tol) else {
                    return Draw::Rejected(Rejection::Domain);
                };
                if !h.is_valid() {
                    return Draw::Rejected(super::rho::rejection_of(h.status));
                }
                let mut out = vec![0.0; DIM];
                let rec = match h.detect_recollision(bx, k, tol) {
                    Ok(Some(rec)) => rec,
                    Ok(None) => return Draw::Value(out),
                    Err(_) => {
                        out[TIES] = 1.0;
                        return Draw::Value(out);
                    }
                };
                // One completion shared by the history and its partner.
                let completion = measure.propose_completion(h.n() + h.m(), rng);
                let log_rho = |x: &History| measure.log_rho0_given(x.final_configuration()?.states(), &completion);
                let Some(lr) = log_rho(&h) else { return Draw::Value(out) };
                let b = h.weight();
                let w = b.signum() * (b.abs().ln() + log_w + lr).exp();
                match rec.direction {
                    Direction::Forward => out[R_PLUS] = w,
                    Direction::Backward => {
                        out[R_MINUS] = w;
                        out[COUNT] = 1.0;
                        match check_partner(bx, source, &h, &rec, &log_rho, tol) {
                            Some(c) => {
                                out[ANTISYM] = c.antisymmetric as u8 as f64;
                                out[ROUND_TRIP] = c.round_trip as u8 as f64;
                                out[SHARED] = c.shared as u8 as f64;
                            }
                            None => out[FAILED] = 1.0,
                        }
                    }
                }
                out[R_BOTH] = out[R_MINUS] + out[R_PLUS];
                Draw::Value(out)
            });
            report.r_minus_samples += acc.sum[COUNT] as u64;
            report.antisymmetric += acc.sum[ANTISYM] as u64;
            report.partner_failures += acc.sum[FAILED] as u64;
            report.round_trips += acc.sum[ROUND_TRIP] as u64;
            report.shared_final += acc.sum[SHARED] as u64;
            report.tolerance_rejections += acc.sum[TIES] as u64;
            let name = format!("{tree} k={k} i={i}");
            minus_terms.push((name.clone(), Estimate::from_accumulator(&acc, R_MINUS, spec.seed)));
            plus_terms.push((name.clone(), Estimate::from_accumulator(&acc, R_PLUS, spec.seed)));
            both_terms.push((name, Estimate::from_accumulator(&acc, R_BOTH, spec.seed)));
        }
    }
    report.r_minus = Estimate::weighted_sum(minus_terms.iter().map(|(l, e)| (l.clone(), 1, e)), spec.seed);
    report.r_plus = Estimate::weighted_sum(plus_terms.iter().map(|(l, e)| (l.clone(), 1, e)), spec.seed);
    report.summed = Estimate::weighted_sum(both_terms.iter().map(|(l, e)| (l.clone(), 1, e)), spec.seed);
    Ok(report)
}
