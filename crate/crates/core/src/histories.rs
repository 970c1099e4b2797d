//! Collision histories: backward evolution of `z_n` from time `t` down to 0 with
//! particles created in contact with their progenitors at the node times of a
//! tree.
//!
//! Time along a history is the physical time `s` in `[0, t]`; the construction
//! runs from `s = t` downward. Particle labels are 1-based (particle `n+k` is
//! created at node `k`), while state vectors are indexed from 0.
//!
//! The recorded trajectory is a list of keyframes in construction order. The
//! states of keyframe `i` are the true (forward-time) momenta and positions at
//! time `s_i`, and they describe the free motion on `(s_{i+1}, s_i]`:
//! `q(s) = q_i + p_i (s - s_i)`.

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    pair_contact_time, resolve_wall_collision, run_events, wall_contact_time, BoxSpec, Configuration, EventKind,
    ParticleState, Tolerances, Vec3, CONTACT_SLACK,
};
use crate::error::{Error, Result, SingularKind};
use crate::trees::Tree;

/// Variables of one node: creation time, impact direction and created momentum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeVar {
    pub t: f64,
    pub omega: Vec3,
    pub p_hat: Vec3,
}

pub type NodeVars = Vec<NodeVar>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    OverlapAtCreation,
    WallViolationAtCreation,
    SingularFlow,
    EventCapExceeded,
    GrazingCreation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HistoryStatus {
    Valid,
    Rejected(RejectReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Creation {
    Incoming,
    Outgoing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub s: f64,
    pub states: Vec<ParticleState>,
}

/// An event of the backward flow. `kind` uses 0-based state indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEvent {
    pub s: f64,
    pub kind: EventKind,
    /// Keyframe holding the states just below `s`.
    pub keyframe: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub tree: Tree,
    pub start: Configuration,
    pub t: f64,
    pub nodes: NodeVars,
    pub keyframes: Vec<Keyframe>,
    pub events: Vec<HistoryEvent>,
    /// `B_k = a^2 omega_k . (p_hat_k - pi_{j_k}(t_k))`, one per created node.
    pub b_factors: Vec<f64>,
    /// `pi_{j_k}(t_k)`, the progenitor momentum on the segment above `t_k`.
    pub progenitor_momenta: Vec<Vec3>,
    /// Keyframe index of each creation.
    pub creation_keyframes: Vec<usize>,
    pub status: HistoryStatus,
    /// Diameter used for the construction.
    pub diameter: f64,
}

fn check_inputs(z_n: &Configuration, t: f64, tree: &Tree, nv: &[NodeVar]) -> Result<()> {
    if z_n.len() != tree.n() {
        return Err(Error::InvalidInput(format!("tree has {} roots but z_n has {} particles", tree.n(), z_n.len())));
    }
    if nv.len() != tree.m() {
        return Err(Error::InvalidNodeVars(format!("tree has {} nodes, got {} node variables", tree.m(), nv.len())));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidInput(format!("time must be positive, got {t}")));
    }
    let mut prev = t;
    for (k, v) in nv.iter().enumerate() {
        if !(v.t < prev && v.t > 0.0) {
            return Err(Error::InvalidNodeVars(format!("node {} time {} breaks the ordering t > t_1 > ... > 0", k + 1, v.t)));
        }
        if !((v.omega.norm() - 1.0).abs() < 1e-9) || v.p_hat.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidNodeVars(format!("node {} has a non-unit direction or non-finite momentum", k + 1)));
        }
        prev = v.t;
    }
    Ok(())
}

fn reversed(states: &[ParticleState]) -> Vec<ParticleState> {
    states.iter().map(ParticleState::reversed).collect()
}

fn flow_reason(e: &Error) -> RejectReason {
    match e {
        Error::SingularSample(SingularKind::EventCap) => RejectReason::EventCapExceeded,
        _ => RejectReason::SingularFlow,
    }
}

/// Builds the collision history of `z_n` at time `t` for `tree` and node
/// variables `nv`. Geometric failures are reported in the status; malformed
/// inputs are errors.
pub fn build_history(
    bx: &BoxSpec,
    z_n: &Configuration,
    t: f64,
    tree: &Tree,
    nv: &[NodeVar],
    tol: &Tolerances,
) -> Result<History> {
    check_inputs(z_n, t, tree, nv)?;
    let a = bx.diameter();
    let slack = CONTACT_SLACK * a;
    let mut h = History {
        tree: tree.clone(),
        start: z_n.clone(),
        t,
        nodes: nv.to_vec(),
        keyframes: vec![Keyframe { s: t, states: z_n.states().to_vec() }],
        events: Vec::new(),
        b_factors: Vec::with_capacity(nv.len()),
        progenitor_momenta: Vec::with_capacity(nv.len()),
        creation_keyframes: Vec::with_capacity(nv.len()),
        status: HistoryStatus::Valid,
        diameter: a,
    };
    let mut states = reversed(z_n.states());
    let mut s = t;
    for k in 0..=nv.len() {
        let s_next = nv.get(k).map_or(0.0, |v| v.t);
        let (keyframes, events) = (&mut h.keyframes, &mut h.events);
        let run = run_events(bx, &mut states, s - s_next, tol, |tau, kind, st| {
            keyframes.push(Keyframe { s: s - tau, states: reversed(st) });
            events.push(HistoryEvent { s: s - tau, kind: *kind, keyframe: keyframes.len() - 1 });
        });
        if let Err(e) = run {
            h.status = HistoryStatus::Rejected(flow_reason(&e));
            return Ok(h);
        }
        s = s_next;
        let Some(v) = nv.get(k) else { break };
        let j = tree.j(k + 1) - 1;
        let q = states[j].q + v.omega * a;
        if bx.margin_distance(&q) < -slack {
            h.status = HistoryStatus::Rejected(RejectReason::WallViolationAtCreation);
            return Ok(h);
        }
        let min_sq = (a - slack) * (a - slack);
        if states.iter().enumerate().any(|(i, o)| i != j && (o.q - q).norm_squared() < min_sq) {
            h.status = HistoryStatus::Rejected(RejectReason::OverlapAtCreation);
            return Ok(h);
        }
        let pi = -states[j].p;
        let b = a * a * v.omega.dot(&(v.p_hat - pi));
        h.b_factors.push(b);
        h.progenitor_momenta.push(pi);
        if b.abs() < tol.eps_graze * a * a {
            h.status = HistoryStatus::Rejected(RejectReason::GrazingCreation);
            return Ok(h);
        }
        states.push(ParticleState::new(q, -v.p_hat));
        h.keyframes.push(Keyframe { s, states: reversed(&states) });
        h.creation_keyframes.push(h.keyframes.len() - 1);
    }
    h.keyframes.push(Keyframe { s: 0.0, states: reversed(&states) });
    Ok(h)
}

impl History {
    pub fn is_valid(&self) -> bool {
        self.status == HistoryStatus::Valid
    }

    pub fn n(&self) -> usize {
        self.tree.n()
    }

    pub fn m(&self) -> usize {
        self.tree.m()
    }

    /// Product of the B factors; 0 for rejected histories.
    pub fn weight(&self) -> f64 {
        if self.is_valid() {
            self.b_factors.iter().product()
        } else {
            0.0
        }
    }

    /// Debug dump with keyframes, events, B factors and status.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("history serializes")
    }

    /// `zeta(0)`, available for valid histories.
    pub fn final_configuration(&self) -> Option<Configuration> {
        self.is_valid().then(|| Configuration::new(self.keyframes.last().expect("keyframes").states.clone()))
    }

    /// Creation type of node `k` (1-based).
    pub fn classify_creation(&self, k: usize) -> Creation {
        if self.b_factors[k - 1] > 0.0 {
            Creation::Outgoing
        } else {
            Creation::Incoming
        }
    }

    /// States of all particles alive at time `s` (`s` strictly inside a keyframe
    /// interval, or at a keyframe time).
    pub fn states_at(&self, s: f64) -> Vec<ParticleState> {
        let i = self.keyframe_covering(s);
        let kf = &self.keyframes[i];
        kf.states.iter().map(|st| ParticleState::new(st.q + st.p * (s - kf.s), st.p)).collect()
    }

    fn keyframe_covering(&self, s: f64) -> usize {
        let last = self.keyframes.len() - 1;
        (0..last).find(|&i| self.keyframes[i + 1].s < s && s <= self.keyframes[i].s).unwrap_or(last)
    }

    /// Time of the first creation whose progenitor is `label`, or 0.
    fn first_creation_by(&self, label: usize) -> f64 {
        self.tree.js().iter().zip(&self.nodes).find(|(&j, _)| j == label).map_or(0.0, |(_, v)| v.t)
    }

    fn check_tie(&self, s: f64, tol: &Tolerances) -> Result<()> {
        if self.nodes.iter().any(|v| (v.t - s).abs() < tol.eps_time) || (self.t - s).abs() < tol.eps_time || s < tol.eps_time {
            Err(Error::SingularSample(SingularKind::NearMultiple))
        } else {
            Ok(())
        }
    }

    /// Recollision of the particle created at node `k` (1-based). For an
    /// incoming creation this is its first pair contact in the backward flow
    /// before it creates a particle itself; for an outgoing creation it is the
    /// first contact of a ghost copy free-streamed forward from the creation
    /// state against the other particles of the history.
    pub fn detect_recollision(&self, bx: &BoxSpec, k: usize, tol: &Tolerances) -> Result<Option<RecollisionRecord>> {
        if !self.is_valid() {
            return Err(Error::InvalidInput("recollisions are defined on valid histories only".into()));
        }
        match self.classify_creation(k) {
            Creation::Incoming => self.backward_recollision(k, tol),
            Creation::Outgoing => self.forward_recollision(bx, k, tol),
        }
    }

    fn backward_recollision(&self, k: usize, tol: &Tolerances) -> Result<Option<RecollisionRecord>> {
        let label = self.n() + k;
        let c = label - 1;
        let t_k = self.nodes[k - 1].t;
        let lo = self.first_creation_by(label);
        for e in &self.events {
            if e.s >= t_k {
                continue;
            }
            if e.s <= lo {
                break;
            }
            let EventKind::PairCollision { i, j, .. } = e.kind else { continue };
            if i != c && j != c {
                continue;
            }
            self.check_tie(e.s, tol)?;
            let partner = if i == c { j } else { i };
            let post = &self.keyframes[e.keyframe].states;
            let pre = &self.keyframes[e.keyframe - 1].states;
            let d = post[c].q - post[partner].q;
            return Ok(Some(RecollisionRecord {
                node: k,
                particle: label,
                partner: partner + 1,
                time: e.s,
                direction: Direction::Backward,
                omega: d / d.norm(),
                momentum: pre[c].p,
                partner_momentum: pre[partner].p,
                distance: d.norm(),
            }));
        }
        Ok(None)
    }

    fn forward_recollision(&self, bx: &BoxSpec, k: usize, tol: &Tolerances) -> Result<Option<RecollisionRecord>> {
        let c = self.n() + k - 1;
        let v = &self.nodes[k - 1];
        let a = bx.diameter();
        let start = self.creation_keyframes[k - 1];
        let mut ghost = ParticleState::new(self.keyframes[start].states[c].q, v.p_hat);
        let mut s = v.t;
        // Keyframes above the creation, from the nearest one upward.
        for i in (0..start).rev() {
            let kf = &self.keyframes[i];
            if kf.s <= s {
                continue;
            }
            let hi = kf.s;
            while s < hi {
                let wall = wall_contact_time(bx, &ghost.q, &ghost.p);
                let end = wall.map_or(hi, |(wt, _)| (s + wt).min(hi));
                let mut best: Option<(f64, usize)> = None;
                for (o, st) in kf.states.iter().enumerate() {
                    if o == c {
                        continue;
                    }
                    let qo = st.q + st.p * (s - kf.s);
                    if let Some(tc) = pair_contact_time(&(ghost.q - qo), &(ghost.p - st.p), a) {
                        if s + tc <= end && best.is_none_or(|(bt, _)| tc < bt) {
                            best = Some((tc, o));
                        }
                    }
                }
                if let Some((tc, o)) = best {
                    let time = s + tc;
                    self.check_tie(time, tol)?;
                    let st = &kf.states[o];
                    let qo = st.q + st.p * (time - kf.s);
                    let d = ghost.q + ghost.p * tc - qo;
                    return Ok(Some(RecollisionRecord {
                        node: k,
                        particle: c + 1,
                        partner: o + 1,
                        time,
                        direction: Direction::Forward,
                        omega: d / d.norm(),
                        momentum: ghost.p,
                        partner_momentum: st.p,
                        distance: d.norm(),
                    }));
                }
                ghost.q += ghost.p * (end - s);
                if let Some((wt, face)) = wall {
                    if s + wt <= hi {
                        ghost.p = resolve_wall_collision(ghost.p, face.inward_normal(), tol.eps_graze)?;
                    }
                }
                s = end;
            }
        }
        Ok(None)
    }

    /// The history obtained by trading the recollision in `rec` for a creation
    /// and erasing the creation at `rec.node`. Returns it with the new slot.
    pub fn cancellation_partner(&self, bx: &BoxSpec, rec: &RecollisionRecord, tol: &Tolerances) -> Result<(History, usize)> {
        let k = rec.node;
        let n = self.n();
        let m = self.m();
        let slot = 1 + self.nodes.iter().enumerate().filter(|&(r, v)| r + 1 != k && v.t > rec.time).count();
        let (c, c_new) = (n + k, n + slot);
        let relabel = |p: usize| move_label(p, c, c_new);
        let mut js = Vec::with_capacity(m);
        let mut nodes = Vec::with_capacity(m);
        let mut old = self.tree.js().iter().zip(&self.nodes).enumerate().filter(|&(r, _)| r + 1 != k).map(|(_, x)| x);
        for r in 1..=m {
            if r == slot {
                js.push(relabel(rec.partner));
                nodes.push(NodeVar { t: rec.time, omega: rec.omega, p_hat: rec.momentum });
            } else {
                let (&j, v) = old.next().ok_or_else(|| Error::PartnerConstructionFailed("node bookkeeping".into()))?;
                js.push(relabel(j));
                nodes.push(*v);
            }
        }
        let tree = Tree::new(n, js).map_err(|e| Error::PartnerConstructionFailed(e.to_string()))?;
        let partner = build_history(bx, &self.start, self.t, &tree, &nodes, tol)
            .map_err(|e| Error::PartnerConstructionFailed(e.to_string()))?;
        Ok((partner, slot))
    }
}

/// Moves particle label `c` to `c_new`, shifting the labels in between by one
/// so that creation order is preserved.
pub fn move_label(p: usize, c: usize, c_new: usize) -> usize {
    if p == c {
        c_new
    } else if c < c_new && p > c && p <= c_new {
        p - 1
    } else if c_new < c && p >= c_new && p < c {
        p + 1
    } else {
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Found in the backward flow below the creation.
    Backward,
    /// Found by the forward ghost above the creation.
    Forward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecollisionRecord {
    /// Node (1-based) whose created particle recollides.
    pub node: usize,
    /// Label of the created particle.
    pub particle: usize,
    /// Label of the particle it meets.
    pub partner: usize,
    pub time: f64,
    pub direction: Direction,
    /// Unit vector from the partner to the particle at contact.
    pub omega: Vec3,
    /// Particle momentum on the side of the contact away from its creation.
    pub momentum: Vec3,
    pub partner_momentum: Vec3,
    /// Centre distance at contact.
    pub distance: f64,
}
