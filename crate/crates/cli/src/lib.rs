//! Experiment harness for the private distributed mean estimation library:
//! configuration parsing, Monte-Carlo sweeps with CSV output, the Laplace
//! baseline, lower-bound overlay evaluators, and a toy differentially
//! private SGD loop.

pub mod config;
pub mod dpsgd;
pub mod laplace;
pub mod lower_bound;
pub mod sweep;
