//! Epidemic population games under perturbed best response dynamics.
//!
//! The crate couples a normalized SIRS epidemic with a dynamic payoff
//! mechanism and a population that revises strategies by a perturbed best
//! response rule. On top of the closed-loop simulator it provides the
//! planner's tools: budget-constrained reward design, Lyapunov-based anytime
//! bounds on the infectious fraction, and estimation of the population's
//! decision-noise level from surveys.

pub mod bounds;
pub mod choice;
pub mod cli;
pub mod design;
pub mod dynamics;
pub mod error;
pub mod learning;

pub use error::{Error, Result};
