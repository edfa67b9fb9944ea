use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape {
        shape: Vec<usize>,
        reason: &'static str,
    },
    #[error("{op}: non-finite value encountered")]
    NonFinite { op: &'static str },
    #[error("invalid range [{lo}, {hi})")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("{what}: expected length {expected}, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("permutation factor {m} does not divide length {n}")]
    Divisibility { n: usize, m: usize },
    #[error("dense construction limited to N <= {max}, got {n}")]
    SizeGuard { n: usize, max: usize },
    #[error("{op}: value {value} outside [-1, 1]")]
    Domain { op: &'static str, value: f64 },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("target is not unitary (deviation {deviation:e})")]
    NonUnitary { deviation: f64 },
    #[error("tape node {node} consumes input {input} that is not recorded before it")]
    Cycle { node: usize, input: usize },
    #[error("unregistered operation '{0}'")]
    UnregisteredOp(String),
    #[error("loss node must be a real scalar, got shape {shape:?}")]
    NotRealScalar { shape: Vec<usize> },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("token id {token} out of vocabulary of size {vocab}")]
    OutOfVocab { token: usize, vocab: usize },
    #[error("sequence of length {len} exceeds configured length {max}")]
    LengthOverflow { len: usize, max: usize },
    #[error("{op}: expected {expected} inputs, got {found}")]
    Arity {
        op: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite gradient for parameter '{param}'")]
    NonFiniteGradient { param: String },
}

pub type Result<T> = core::result::Result<T, Error>;
