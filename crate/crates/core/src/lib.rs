//! Hard-sphere dynamics in a box and a tree-expansion evaluator for the
//! time-evolved correlation functions of a finite hard-sphere gas.
//!
//! The crate is organised bottom-up:
//!
//! * [`dynamics`]: exact event-driven flow with specular walls, forward and backward.
//! * [`trees`]: the ordered-node tree graphs indexing collision histories and their rewrite rules.
//! * [`histories`]: construction of collision histories, creation weights, recollisions and
//!   the recollision/creation partner map.
//! * [`densities`]: initial measures, normalization and time-zero correlation functions.
//! * [`estimators`]: signed Monte Carlo estimators for both sides of every identity.

pub mod densities;
pub mod dynamics;
pub mod error;
pub mod estimators;
pub mod histories;
pub mod rng;
pub mod trees;

pub use densities::{GaussianEnvelope, InitialMeasure, MeasureVariant, Normalization, SpatialProfile};
pub use dynamics::{
    advance, backward, BoxSpec, Configuration, Event, EventKind, EventLog, ParticleState, Tolerances,
    Vec3,
};
pub use error::{Error, Result, SingularKind};
pub use estimators::{Estimate, ExperimentSpec, InnerEstimator};
pub use histories::{History, HistoryStatus, NodeVar, NodeVars, RecollisionRecord};
pub use trees::Tree;
