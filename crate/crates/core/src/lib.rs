//! Difference-quotient POD reduced-order models for parametric
//! reaction-diffusion equations.
//!
//! The pipeline is: quadratic finite elements in 1-D ([`mesh`]), parametric
//! reaction-diffusion models ([`model`]), a stiff BDF integrator with periodic
//! orbit detection ([`integrate`]), snapshot sets built from time and parameter
//! difference quotients ([`snapshots`]), an H1-seminorm POD basis
//! ([`pod`]), the Galerkin reduced model ([`rom`]) and the experiment drivers
//! ([`analysis`]).

pub mod analysis;
pub mod error;
pub mod integrate;
pub mod linalg;
pub mod mesh;
pub mod model;
pub mod pod;
pub mod rom;
pub mod snapshots;

pub use error::{Error, Result};
pub use integrate::{
    find_periodic_orbit, integrate, sample_orbit, IntegratorConfig, OdeSystem, OrbitConfig,
    PeriodicOrbit, Trajectory,
};
pub use mesh::{BcKind, BoundaryCondition, FemSpace, Field, Mesh, SymMatrix};
pub use model::{
    Brusselator, ParamPoint, ParametricModel, ScalarModel, ScalarReaction, SemidiscreteSystem,
};
