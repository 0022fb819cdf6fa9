//! Graph specifications, structural validation, synthetic structural causal
//! models and the column-sliced sample table they produce.

mod sample;
mod spec;
mod table;

pub use sample::{
    sample_basis_synthetic, sample_scm, well_conditioned, BasisSynthetic, BasisSyntheticConfig,
    GeneratorConfig, NodeGenerator, ScmInstance,
};
pub use spec::{validate_spec, GraphSpec, NodeKind, NodeSpec, Violation};
pub use table::{SampleTable, Slice};

use thiserror::Error;

use crate::io::IoError;
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum ScmError {
    #[error("malformed graph spec: {0}")]
    Malformed(String),
    #[error("graph spec violates structural conditions: {0:?}")]
    Invalid(Vec<Violation>),
    #[error("generator for node {node} produced a non-finite value")]
    Overflow { node: String },
    #[error("generator for node {node}: {reason}")]
    Generator { node: String, reason: String },
    #[error("sample table: {0}")]
    Table(String),
    #[error("unknown variable {0}")]
    UnknownVariable(String),
    #[error("network: {0}")]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] IoError),
}
