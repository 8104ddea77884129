//! Conditional optimal transport toolkit.
//!
//! Joint measures over a condition space and a state space, exact plain,
//! conditional and relaxed Wasserstein distances, conditional geodesics and
//! velocity fields, Sinkhorn divergences, particle flows, and Bayesian
//! flow matching for posterior sampling.

pub mod bayes_gmm;
pub mod error;
pub mod flow_matching;
pub mod geodesics;
pub mod instances;
pub mod measures;
pub mod nn;
pub mod ot;
pub mod par;
pub mod particle_flow;
pub mod rng;
pub mod sinkhorn;

pub use error::{Error, Result};
pub use measures::{Atom, ConditionGroup, DiscreteJointMeasure};
pub use ot::CostSpec;
