//! Certified performance bounds for measurement-based quantum feedback control.
//!
//! The library turns a controlled open quantum system (Hamiltonian, control
//! fields, homodyne / photon-counting measurement channels) into:
//!
//! 1. a hierarchy of semidefinite programs whose optimal values are rigorous
//!    lower bounds on the achievable control cost (equivalently, upper bounds
//!    on achievable fidelity), built by restricting the HJB subsolution
//!    inequalities to polynomials and quadratic-module certificates;
//! 2. a jump-diffusion Monte-Carlo simulator for the quantum filtering
//!    equation, used to cross-validate the bounds; and
//! 3. a greedy feedback controller extracted from the optimal value
//!    polynomial, whose simulated performance sandwiches the bound.
//!
//! Modules follow the pipeline: [`poly`] → [`model`] → [`generator`] →
//! [`sos`] → [`conic`], with [`sim`] and [`policy`] on the validation side and
//! [`presets`] providing the built-in qubit benchmark models.

pub mod compiled;
pub mod conic;
pub mod error;
pub mod generator;
pub mod model;
pub mod policy;
pub mod poly;
pub mod presets;
pub mod sim;
pub mod sos;

pub use error::{Error, Result};
pub use poly::{AffineExpr, DecisionPoly, Monomial, Poly, Polynomial, TermRecord, VariableSet};
