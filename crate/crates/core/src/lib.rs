//! Online gradient descent with a safety buffer for constrained linear
//! systems driven by bounded adversarial disturbances.
//!
//! The controller is a disturbance-action policy `u = -K x + sum_i M[i] w_{t-i}`
//! whose weights are kept inside a tightened polytope of policies that provably
//! keeps the true state and input inside their constraint sets.

pub mod dac;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod lti;
pub mod nnls;
pub mod ogd;
pub mod safe_set;

pub use dac::{DacModel, DacWeights, DecayClass, DisturbanceHistory, ResponseMatrices};
pub use geometry::{ConvexSet, GeometryError, NormTag};
pub use lti::{LtiError, LtiSystem, SafetySpec, StabilityCertificate};
pub use ogd::{AlgorithmParams, CostFunction, OgdBzc, QuadraticCost, RunTrace, Schedule};
pub use safe_set::{SafePolicySet, SafeSetError};

pub type Vector = nalgebra::DVector<f64>;
pub type Matrix = nalgebra::DMatrix<f64>;
