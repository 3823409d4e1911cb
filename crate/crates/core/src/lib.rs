//! Simulation and verification toolkit for multi-species spherical mixed
//! p-spin glasses.
//!
//! The crate is organised bottom-up:
//!
//! * [`mixture`]: species layouts, mixture polynomials and their exact
//!   algebra (shifted mixtures, Onsager and log-volume terms).
//! * [`geometry`]: configurations on products of spheres, overlaps, shells,
//!   bands and the coordinate maps used around a shell point.
//! * [`hamiltonian`]: realizations of the Gaussian Hamiltonian, either as
//!   dense disorder tensors or as an exact joint law on a finite point set.
//! * [`thermo`]: free-energy oracles and Monte Carlo estimators (parallel
//!   tempering plus thermodynamic integration), restricted to bands and
//!   replica tuples when asked.
//! * [`ground_state`]: constrained maximization of the Hamiltonian on a
//!   shell.
//! * [`tap`]: assembly of the TAP decomposition and its diagnostics.
//!
//! Free-energy estimators and ground-state solvers are strategies behind
//! trait objects, looked up by name in a [`registry::Registry`].

pub mod error;
pub mod geometry;
pub mod ground_state;
pub mod hamiltonian;
pub mod mixture;
pub mod registry;
pub mod seeding;
pub mod stats;
pub mod tap;
pub mod thermo;

pub use error::{Error, Result};
pub use geometry::{BandSpec, Configuration};
pub use hamiltonian::{Backend, HamiltonianInstance};
pub use mixture::{Mixture, MultiDegree, OverlapVector, SpeciesLayout};
pub use tap::{TapConfig, TapReport};
pub use thermo::{FreeEnergyEstimate, Method};

