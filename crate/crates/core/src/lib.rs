//! Planar convex variational problems `J(u) = ∫ f(|∇u|)` whose integrand has
//! `f'(0) > 0`.
//!
//! The crate minimizes smoothed functionals on a masked lattice, recovers the
//! stream function of the minimizer, locates critical points and computes
//! their winding index, and evaluates residuals of the associated degenerate
//! elliptic equations.
//!
//! Interchangeable pieces (Lagrangian families, optimizers, equation forms)
//! sit behind traits and are selected by name through [`registry::Registry`].

pub mod critical;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod lagrangian;
pub mod minimize;
pub mod numeric;
pub mod pde;
pub mod pipeline;
pub mod reference;
pub mod registry;
pub mod stream;

pub use error::{Error, Result};
