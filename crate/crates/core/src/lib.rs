//! Lattice spin dynamics on the circle and the sphere: a Metropolis-Hastings
//! chain, the Langevin SDE it approximates, and the harmonic map heat flow
//! both approach, together with the error functionals and statistical checks
//! that measure how closely they track each other.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiment;
pub mod lattice;
pub mod metrics;
pub mod mh;
pub mod noise;
pub mod pde;
pub mod report;
pub mod sde;
pub mod sphere;
pub mod stats;
pub mod trajectory;
pub mod validate;

pub use error::{Error, Result};
pub use lattice::{make_initial_condition, InitialKind, Model, ModelParams, SpinConfiguration};
pub use noise::{BrownianLattice, PathSpec};
pub use sphere::{SpinVector, Vec3};
