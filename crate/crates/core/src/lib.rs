//! Mixed-mechanism adoption cascades on directed follower graphs.
//!
//! The crate covers the full pipeline: simulate cascades where simple,
//! complex, spontaneous and shock-driven adoption compete; calibrate their
//! parameters from an adoption log; train a boosted-tree classifier that
//! labels each observed adoption with its most likely mechanism; test the
//! degree/adoption-order signature; and estimate peer-influence risk ratios
//! with dynamic propensity-score matching.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod adoption;
pub mod calibrate;
pub mod cli;
pub mod cascade;
pub mod error;
pub mod features;
pub mod graph;
pub mod matchlab;
pub mod mechclass;
pub mod rng;
pub mod shocks;
pub mod structtest;
pub mod synthgen;

pub use adoption::{Adoption, AdoptionLog};
pub use calibrate::MechanismParams;
pub use cascade::{CascadeConfig, CascadeEvent, Mechanism};
pub use error::{LabError, Result};
pub use features::FeatureVector;
pub use graph::{DirectedGraph, Direction, NodeId};
pub use mechclass::{BoostedForest, DecompositionReport};
pub use shocks::{Day, ShockSchedule};
