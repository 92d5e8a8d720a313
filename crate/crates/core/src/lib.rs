//! Exact computations for real-time agenda setting.
//!
//! An agenda setter repeatedly proposes policies against a status quo that a
//! committee accepts or rejects. The crate computes the setter's favorite
//! improvements, equilibrium outcomes by iteration and by backward induction,
//! stable sets, reachability notions and a family of instance generators.

pub mod ccp;
pub mod engine;
pub mod error;
pub mod fixtures;
pub mod generators;
pub mod horizons;
pub mod io;
pub mod lab;
pub mod oracle;
pub mod rational;

pub use ccp::{PolicyId, Problem, Tournament, VotingRule};
pub use error::{Error, Result};
pub use rational::Rational;
