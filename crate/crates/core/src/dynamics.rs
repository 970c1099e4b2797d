//! Event-driven hard-sphere flow in an axis-aligned box with specular walls.
//!
//! Particles have unit mass and common diameter `a`. Between events every
//! particle moves on a straight line; pair contacts and wall contacts are
//! resolved instantaneously. At an event instant the stored state is the
//! outgoing one (the flow is right-continuous in time).
//!
//! Backward evolution is forward evolution conjugated by momentum reversal, so
//! there is a single event loop.
//!
//! Particle indices in this module are 0-based.

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, SingularKind};

pub type Vec3 = Vector3<f64>;

/// Relative slack on contact distances and wall margins when testing membership
/// in the admissible phase space. Contact configurations built in floating point
/// land within a few ulps of the boundary.
pub const CONTACT_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    lengths: [f64; 3],
    diameter: f64,
}

impl BoxSpec {
    pub fn new(lengths: [f64; 3], diameter: f64) -> Result<Self> {
        if !(diameter > 0.0 && diameter.is_finite()) {
            return Err(Error::InvalidBox(format!("diameter must be positive, got {diameter}")));
        }
        if lengths.iter().any(|l| !(l.is_finite() && *l > diameter)) {
            return Err(Error::InvalidBox(format!(
                "every side must exceed the diameter {diameter}, got {lengths:?}"
            )));
        }
        Ok(Self { lengths, diameter })
    }

    pub fn cube(side: f64, diameter: f64) -> Result<Self> {
        Self::new([side; 3], diameter)
    }

    pub fn lengths(&self) -> [f64; 3] {
        self.lengths
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn volume(&self) -> f64 {
        self.lengths.iter().product()
    }

    /// Volume of the region available to a sphere centre (wall margin `a/2` on each face).
    pub fn free_volume(&self) -> f64 {
        self.lengths.iter().map(|l| l - self.diameter).product()
    }

    /// Lowest admissible centre coordinate along `axis`.
    pub fn lower(&self, _axis: usize) -> f64 {
        0.5 * self.diameter
    }

    /// Highest admissible centre coordinate along `axis`.
    pub fn upper(&self, axis: usize) -> f64 {
        self.lengths[axis] - 0.5 * self.diameter
    }

    /// Uniform draw from the admissible centre region.
    pub fn sample_position<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        Vec3::from_fn(|d, _| self.lower(d) + rng.random::<f64>() * (self.upper(d) - self.lower(d)))
    }

    /// Distance from `q` to the nearest face of the admissible centre region.
    pub fn margin_distance(&self, q: &Vec3) -> f64 {
        (0..3)
            .map(|d| (q[d] - self.lower(d)).min(self.upper(d) - q[d]))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticleState {
    pub q: Vec3,
    pub p: Vec3,
}

impl ParticleState {
    pub fn new(q: Vec3, p: Vec3) -> Self {
        Self { q, p }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.p.iter()).all(|x| x.is_finite())
    }

    pub fn reversed(&self) -> Self {
        Self { q: self.q, p: -self.p }
    }
}

/// An ordered list of particle states; a point of the n-particle phase space
/// when it passes [`is_admissible`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Configuration {
    states: Vec<ParticleState>,
}

impl Configuration {
    pub fn new(states: Vec<ParticleState>) -> Self {
        Self { states }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[ParticleState] {
        &self.states
    }

    pub fn states_mut(&mut self) -> &mut [ParticleState] {
        &mut self.states
    }

    pub fn into_states(self) -> Vec<ParticleState> {
        self.states
    }

    pub fn push(&mut self, s: ParticleState) {
        self.states.push(s);
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.states.iter().map(|s| 0.5 * s.p.norm_squared()).sum()
    }

    pub fn total_momentum(&self) -> Vec3 {
        self.states.iter().map(|s| s.p).sum()
    }

    /// Same positions, all momenta negated.
    pub fn reversed(&self) -> Self {
        Self { states: self.states.iter().map(ParticleState::reversed).collect() }
    }

    /// Concatenation `(self, other)`.
    pub fn extended(&self, other: &[ParticleState]) -> Self {
        let mut states = self.states.clone();
        states.extend_from_slice(other);
        Self { states }
    }
}

impl From<Vec<ParticleState>> for Configuration {
    fn from(states: Vec<ParticleState>) -> Self {
        Self::new(states)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Minimum normal relative speed at a contact.
    pub eps_graze: f64,
    /// Minimum separation in time between distinct events.
    pub eps_time: f64,
    /// Event cap per trajectory.
    pub max_events: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { eps_graze: 1e-9, eps_time: 1e-12, max_events: 10_000 }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        if self.eps_graze > 0.0 && self.eps_time > 0.0 && self.max_events > 0 {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("tolerances must be strictly positive: {self:?}")))
        }
    }
}

/// A face of the box, identified by axis and side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Face {
    pub axis: usize,
    pub upper: bool,
}

impl Face {
    /// Unit normal pointing into the box.
    pub fn inward_normal(&self) -> Vec3 {
        let mut n = Vec3::zeros();
        n[self.axis] = if self.upper { -1.0 } else { 1.0 };
        n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EventKind {
    /// `omega = (q_i - q_j) / a` at contact.
    PairCollision { i: usize, j: usize, omega: Vec3 },
    WallCollision { i: usize, face: Face },
    /// Horizon reached without an event.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedEvent {
    /// Elapsed time since the start of the run.
    pub time: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EventLog {
    pub events: Vec<LoggedEvent>,
}

impl EventLog {
    pub const CSV_HEADER: [&'static str; 7] = ["time", "kind", "i", "j", "omega_x", "omega_y", "omega_z"];

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// One row per event in the `CSV_HEADER` column order. `j` and `omega` are
    /// empty for wall events; for those the face normal is written into `omega`.
    pub fn csv_rows(&self) -> Vec<[String; 7]> {
        self.events
            .iter()
            .map(|e| match e.kind {
                EventKind::PairCollision { i, j, omega } => [
                    format!("{:.17e}", e.time),
                    "pair".into(),
                    i.to_string(),
                    j.to_string(),
                    format!("{:.17e}", omega.x),
                    format!("{:.17e}", omega.y),
                    format!("{:.17e}", omega.z),
                ],
                EventKind::WallCollision { i, face } => {
                    let n = face.inward_normal();
                    [
                        format!("{:.17e}", e.time),
                        "wall".into(),
                        i.to_string(),
                        String::new(),
                        format!("{:.1}", n.x),
                        format!("{:.1}", n.y),
                        format!("{:.1}", n.z),
                    ]
                }
                EventKind::None => [
                    format!("{:.17e}", e.time),
                    "none".into(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                ],
            })
            .collect()
    }
}

/// Elastic pair collision. `omega` is the unit vector from `j` to `i`.
pub fn resolve_pair_collision(p_in_i: Vec3, p_in_j: Vec3, omega: Vec3) -> Result<(Vec3, Vec3)> {
    let vn = omega.dot(&(p_in_i - p_in_j));
    if !(vn < 0.0) {
        return Err(Error::InvalidCollision(format!(
            "pair not incoming: omega.(p_i - p_j) = {vn}"
        )));
    }
    let dp = omega * vn;
    Ok((p_in_i - dp, p_in_j + dp))
}

/// Specular reflection off a face with inward unit normal `n`.
pub fn resolve_wall_collision(p_in: Vec3, n: Vec3, eps_graze: f64) -> Result<Vec3> {
    let vn = n.dot(&p_in);
    if vn.abs() < eps_graze * p_in.norm() {
        return Err(Error::SingularSample(SingularKind::Graze));
    }
    if vn > 0.0 {
        return Err(Error::InvalidCollision(format!("momentum leaves the wall: n.p = {vn}")));
    }
    Ok(p_in - n * (2.0 * vn))
}

/// Earliest future time at which two spheres with relative position `dq` and
/// relative momentum `dp` touch while approaching.
pub fn pair_contact_time(dq: &Vec3, dp: &Vec3, diameter: f64) -> Option<f64> {
    let b = dq.dot(dp);
    if b >= 0.0 {
        return None;
    }
    let vv = dp.norm_squared();
    let c = dq.norm_squared() - diameter * diameter;
    let disc = b * b - vv * c;
    if disc < 0.0 {
        return None;
    }
    // Stable form of the smaller root; `c` may be a few ulps negative at contact.
    Some((c / (-b + disc.sqrt())).max(0.0))
}

/// Earliest future time at which a centre at `q` moving with `p` reaches a face of
/// the admissible region.
pub fn wall_contact_time(bx: &BoxSpec, q: &Vec3, p: &Vec3) -> Option<(f64, Face)> {
    let mut best: Option<(f64, Face)> = None;
    for axis in 0..3 {
        let cand = if p[axis] < 0.0 {
            Some(((q[axis] - bx.lower(axis)) / -p[axis], Face { axis, upper: false }))
        } else if p[axis] > 0.0 {
            Some(((bx.upper(axis) - q[axis]) / p[axis], Face { axis, upper: true }))
        } else {
            None
        };
        if let Some((t, f)) = cand {
            let t = t.max(0.0);
            if best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, f));
            }
        }
    }
    best
}

struct Scan {
    first: f64,
    kind: EventKind,
    second: f64,
}

fn scan(bx: &BoxSpec, states: &[ParticleState]) -> Option<Scan> {
    let a = bx.diameter();
    let mut first = f64::INFINITY;
    let mut second = f64::INFINITY;
    let mut kind = EventKind::None;
    let mut offer = |t: f64, k: EventKind| {
        if t < first {
            second = first;
            first = t;
            kind = k;
        } else if t < second {
            second = t;
        }
    };
    for i in 0..states.len() {
        for j in (i + 1)..states.len() {
            let dq = states[i].q - states[j].q;
            let dp = states[i].p - states[j].p;
            if let Some(t) = pair_contact_time(&dq, &dp, a) {
                offer(t, EventKind::PairCollision { i, j, omega: Vec3::zeros() });
            }
        }
        // Every face the particle is moving toward counts, so that corner hits
        // register as near-multiple events.
        for axis in 0..3 {
            let (q, p) = (states[i].q[axis], states[i].p[axis]);
            if p < 0.0 {
                offer(((q - bx.lower(axis)) / -p).max(0.0), EventKind::WallCollision { i, face: Face { axis, upper: false } });
            } else if p > 0.0 {
                offer(((bx.upper(axis) - q) / p).max(0.0), EventKind::WallCollision { i, face: Face { axis, upper: true } });
            }
        }
    }
    first.is_finite().then_some(Scan { first, kind, second })
}

fn stream(states: &mut [ParticleState], dt: f64) {
    for s in states.iter_mut() {
        s.q += s.p * dt;
    }
}

/// Applies the event (already streamed to contact). Returns the kind with the
/// contact vector filled in.
fn apply(bx: &BoxSpec, states: &mut [ParticleState], kind: EventKind, tol: &Tolerances) -> Result<EventKind> {
    match kind {
        EventKind::PairCollision { i, j, .. } => {
            let d = states[i].q - states[j].q;
            let omega = d / d.norm();
            let vn = omega.dot(&(states[i].p - states[j].p));
            if vn.abs() < tol.eps_graze {
                return Err(Error::SingularSample(SingularKind::Graze));
            }
            let (pi, pj) = resolve_pair_collision(states[i].p, states[j].p, omega)?;
            states[i].p = pi;
            states[j].p = pj;
            Ok(EventKind::PairCollision { i, j, omega })
        }
        EventKind::WallCollision { i, face } => {
            states[i].p = resolve_wall_collision(states[i].p, face.inward_normal(), tol.eps_graze)?;
            // Pin to the face to stop drift across the margin.
            states[i].q[face.axis] = if face.upper { bx.upper(face.axis) } else { bx.lower(face.axis) };
            Ok(kind)
        }
        EventKind::None => Ok(kind),
    }
}

/// Earliest event within `horizon`, or `EventKind::None` at `horizon`.
pub fn next_event(bx: &BoxSpec, c: &Configuration, horizon: f64, tol: &Tolerances) -> Result<Event> {
    let Some(s) = scan(bx, c.states()) else {
        return Ok(Event { time: horizon, kind: EventKind::None });
    };
    if s.first > horizon {
        return Ok(Event { time: horizon, kind: EventKind::None });
    }
    if s.second - s.first < tol.eps_time {
        return Err(Error::SingularSample(SingularKind::NearMultiple));
    }
    let kind = match s.kind {
        EventKind::PairCollision { i, j, .. } => {
            let qi = c.states()[i].q + c.states()[i].p * s.first;
            let qj = c.states()[j].q + c.states()[j].p * s.first;
            let d = qi - qj;
            let omega = d / d.norm();
            if omega.dot(&(c.states()[i].p - c.states()[j].p)).abs() < tol.eps_graze {
                return Err(Error::SingularSample(SingularKind::Graze));
            }
            EventKind::PairCollision { i, j, omega }
        }
        EventKind::WallCollision { i, face } => {
            let p = c.states()[i].p;
            if face.inward_normal().dot(&p).abs() < tol.eps_graze * p.norm() {
                return Err(Error::SingularSample(SingularKind::Graze));
            }
            s.kind
        }
        EventKind::None => s.kind,
    };
    Ok(Event { time: s.first, kind })
}

/// Core event loop. Evolves `states` forward by `duration`, calling `on_event`
/// with the elapsed time, the resolved event and the post-event states.
/// Returns the number of events.
pub(crate) fn run_events<F>(
    bx: &BoxSpec,
    states: &mut [ParticleState],
    duration: f64,
    tol: &Tolerances,
    mut on_event: F,
) -> Result<usize>
where
    F: FnMut(f64, &EventKind, &[ParticleState]),
{
    let mut remaining = duration;
    let mut elapsed = 0.0;
    let mut count = 0usize;
    loop {
        let Some(s) = scan(bx, states) else {
            stream(states, remaining);
            return Ok(count);
        };
        if s.first > remaining {
            stream(states, remaining);
            return Ok(count);
        }
        if s.second - s.first < tol.eps_time || (count > 0 && s.first < tol.eps_time) {
            return Err(Error::SingularSample(SingularKind::NearMultiple));
        }
        count += 1;
        if count > tol.max_events {
            return Err(Error::SingularSample(SingularKind::EventCap));
        }
        stream(states, s.first);
        let kind = apply(bx, states, s.kind, tol)?;
        elapsed += s.first;
        remaining -= s.first;
        on_event(elapsed, &kind, states);
    }
}

/// Forward flow by `duration` with the ordered event log.
pub fn advance(bx: &BoxSpec, c: &Configuration, duration: f64, tol: &Tolerances) -> Result<(Configuration, EventLog)> {
    if !(duration >= 0.0) {
        return Err(Error::InvalidInput(format!("duration must be non-negative, got {duration}")));
    }
    let mut states = c.states().to_vec();
    let mut log = EventLog::default();
    run_events(bx, &mut states, duration, tol, |time, kind, _| {
        log.events.push(LoggedEvent { time, kind: *kind });
    })?;
    Ok((Configuration::new(states), log))
}

/// Forward flow without logging.
pub fn advance_state(bx: &BoxSpec, c: &Configuration, duration: f64, tol: &Tolerances) -> Result<Configuration> {
    let mut states = c.states().to_vec();
    run_events(bx, &mut states, duration, tol, |_, _, _| {})?;
    Ok(Configuration::new(states))
}

/// Backward flow `T_{-duration}`: reverse momenta, flow forward, reverse again.
pub fn backward(bx: &BoxSpec, c: &Configuration, duration: f64, tol: &Tolerances) -> Result<Configuration> {
    if !(duration >= 0.0) {
        return Err(Error::InvalidInput(format!("duration must be non-negative, got {duration}")));
    }
    let mut states: Vec<ParticleState> = c.states().iter().map(ParticleState::reversed).collect();
    run_events(bx, &mut states, duration, tol, |_, _, _| {})?;
    for s in states.iter_mut() {
        s.p = -s.p;
    }
    Ok(Configuration::new(states))
}

/// Membership in the admissible phase space: pair gaps at least `a` and wall
/// margin at least `a/2`, both up to [`CONTACT_SLACK`].
pub fn is_admissible(bx: &BoxSpec, states: &[ParticleState]) -> bool {
    let a = bx.diameter();
    let slack = CONTACT_SLACK * a;
    let min_sq = (a - slack) * (a - slack);
    states.iter().enumerate().all(|(i, s)| {
        s.is_finite()
            && bx.margin_distance(&s.q) >= -slack
            && states[i + 1..].iter().all(|o| (s.q - o.q).norm_squared() >= min_sq)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SingularClass {
    Ok,
    Graze,
    NearMultiple,
}

/// Classifies the instantaneous contacts of `c`: a contact whose normal
/// relative speed is below `eps_graze` is a graze; a particle touching more
/// than one obstacle at once is a near-multiple contact.
pub fn classify_singular(bx: &BoxSpec, c: &Configuration, tol: &Tolerances) -> SingularClass {
    let a = bx.diameter();
    let slack = CONTACT_SLACK * a;
    let states = c.states();
    let mut contacts = vec![0usize; states.len()];
    let mut graze = false;
    for i in 0..states.len() {
        for j in (i + 1)..states.len() {
            let d = states[i].q - states[j].q;
            let r = d.norm();
            if (r - a).abs() <= slack {
                contacts[i] += 1;
                contacts[j] += 1;
                if (d / r).dot(&(states[i].p - states[j].p)).abs() < tol.eps_graze {
                    graze = true;
                }
            }
        }
        for axis in 0..3 {
            let q = states[i].q[axis];
            let p = states[i].p;
            if (q - bx.lower(axis)).abs() <= slack || (bx.upper(axis) - q).abs() <= slack {
                contacts[i] += 1;
                if p[axis].abs() < tol.eps_graze * p.norm() {
                    graze = true;
                }
            }
        }
    }
    if contacts.iter().any(|&k| k > 1) {
        SingularClass::NearMultiple
    } else if graze {
        SingularClass::Graze
    } else {
        SingularClass::Ok
    }
}
