//! Discovery of latent hierarchical causal structure from observational data.
//!
//! The crate is organised bottom-up:
//!
//! * [`nn`]: dense Leaky-ReLU networks, reverse-mode gradients and Adam.
//! * [`scm`]: graph specifications, structural checks and synthetic sampling.
//! * [`basis`]: the two-view partitioned-latent autoencoder and its baseline.
//! * [`eval`]: kernel-regression R² and the prediction predicates built on it.
//! * [`search`]: the iterative active-set search that assembles the hierarchy.
//! * [`harness`]: presets, experiment drivers and file export used by the CLI.

pub mod basis;
pub mod eval;
pub mod harness;
pub mod io;
pub mod nn;
pub mod par;
pub mod scm;
pub mod search;
pub mod stats;
