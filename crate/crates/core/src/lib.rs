//! Hyperbolic motions of the Newtonian N-body problem.
//!
//! Limit shapes and their derivative, Newton shooting for a prescribed
//! asymptotic velocity, Jacobi–Maupertuis action potentials, Busemann
//! functions, and a closed-form Kepler oracle used as ground truth.

// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod action;
pub mod asymptotics;
pub mod busemann;
pub mod cone;
pub mod error;
pub mod flow;
pub mod kepler;
pub mod ode;
pub mod quad;
pub mod scattering;
pub mod system;
pub mod verify;

pub use error::{Error, Result};
pub use system::{Configuration, MassSystem, TangentVector, Vector};
