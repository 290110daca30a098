//! Within-host viral dynamics with intracellular state-dependent delay.
//!
//! The model couples five populations — uninfected target cells `T`, infected
//! cells `T*`, free virus `V`, a CTL response `Y` and an antibody response `A` —
//! through a Beddington–DeAngelis infection term whose delayed argument is read
//! at `t − η(u_t)`, where the delay `η` is a functional of the recent solution
//! history. The crate provides:
//!
//! - the model right-hand side and a catalog of delay functionals ([`model`], [`delay`]),
//! - a method-of-steps RK4 integrator with cubic Hermite dense output and
//!   fixed-point resolution of in-step delayed lookups ([`integrator`], [`history`]),
//! - the interior equilibrium and its existence hypotheses ([`equilibrium`]),
//! - forward-invariance, absorbing-set and integral-representation checks ([`invariants`]),
//! - Lyapunov functionals for the constant-delay and state-dependent-delay
//!   settings together with their dissipation decompositions ([`lyapunov`]),
//! - a config-file driven CLI front end ([`config`], [`runner`]).

// `!(x > 0.0)` rejects NaN along with the sign violation; `x <= 0.0` would not.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod delay;
pub mod equilibrium;
mod error;
pub mod history;
pub mod integrator;
pub mod invariants;
pub mod lyapunov;
pub mod model;
pub mod runner;

pub use delay::{DelaySpec, Segment};
pub use equilibrium::Equilibrium;
pub use error::{Error, Result};
pub use history::{InitialFunction, Trajectory};
pub use integrator::SimConfig;
pub use invariants::InvariantBounds;
pub use model::{ModelParams, StateDerivative, StatePoint};
