//! Simulation and verification toolkit for low-dimensional disordered spin
//! systems.
//!
//! The crate is organized around a quenched-disorder setup: a base spin
//! Hamiltonian on a finite region of `Z^d` perturbed by an i.i.d. Gaussian
//! field coupled to a bounded local observable. Modules provide:
//!
//! - [`lattice`]: vertices, boxes, regions, boundaries, hierarchical box
//!   families;
//! - [`disorder`]: reproducible Gaussian field sampling and mean/fluctuation
//!   decompositions;
//! - [`models`]: the supported spin models, spin configurations, boundary
//!   conditions, and energy evaluation;
//! - [`exact`]: exact finite-volume Gibbs computations by state enumeration;
//! - [`mcmc`]: Markov chain estimators with convergence diagnostics;
//! - [`ground`]: ground-state solvers (min-cut, enumeration, local search);
//! - [`convex`]: stability machinery for convex Lipschitz functions and
//!   Gaussian integral bounds;
//! - [`hierarchy`]: multi-scale box partitions driven by per-box goodness
//!   criteria;
//! - [`spinwave`]: spin-wave rotation profiles and free-energy gap checks for
//!   continuous-symmetry models;
//! - [`harness`]: configuration-driven experiment drivers with CSV output.

pub mod convex;
pub mod disorder;
pub mod error;
pub mod exact;
pub mod ground;
pub mod harness;
pub mod hierarchy;
pub mod lattice;
pub mod maxflow;
pub mod mcmc;
pub mod models;
pub mod numerics;
pub mod spinwave;
pub mod stats;

pub use error::{Error, Result};
pub use lattice::{BoxRegion, Region, Vertex};
pub use models::{Boundary, ModelSpec, ModelVariant, SpinConfig};
