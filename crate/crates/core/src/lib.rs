//! Loewner flows on the universal cover of hyperbolic Riemann surfaces.
//!
//! The crate evaluates the Loewner vector field `P(z, t)` attached to a
//! moving free Fuchsian group `Γ_t`, integrates the forward and inverse
//! flows it generates, and provides the chordal and annulus special cases
//! together with deterministic and SLE-type driving functions.
//!
//! Layout, bottom up:
//!
//! * [`moebius`]: real Moebius maps, triples, classification.
//! * [`fuchsian`]: free groups, reduced words, ball enumeration, limit sets.
//! * [`automorphic`]: truncated series and products over the group.
//! * [`field`]: the δ-system, σ normalization and `P` itself.
//! * [`ode`]: the shared adaptive integrator with pole-aware step control.
//! * [`chordal`], [`annulus`], [`surface_flow`]: flows.
//! * [`driving`]: schedules and stochastic drivers.
//! * [`checks`]: invariant suites shared by tests and the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod annulus;
pub mod automorphic;
pub mod checks;
pub mod chordal;
pub mod driving;
pub mod error;
pub mod exec;
pub mod field;
pub mod fuchsian;
pub mod moebius;
pub mod ode;
pub mod surface_flow;

pub use error::{Error, Result};
pub use exec::Exec;
pub use moebius::{ExtComplex, MapClass, Moebius};
pub use num_complex::Complex64;
