//! Off-policy evaluation of natural stochastic policies (tilting and
//! modified-treatment policies) on tabular decision processes.

pub mod bounds;
pub mod error;
pub mod estimators;
pub mod io;
pub mod experiments;
pub mod linalg;
pub mod mdp;
pub mod nuisance;
pub mod policies;
pub mod selftest;
pub mod tables;

pub use error::{OpeError, Result};
pub use mdp::*;
pub use tables::QTable;
