//! Dense reverse-mode differentiation over `f64` matrices.
//!
//! Every operation appends a node to a [`Tape`] and returns a [`Var`] handle.
//! Values are always 2-D; scalars are `1×1` and vectors are single rows or
//! columns. [`Tape::backward`] walks the tape in reverse and returns the
//! gradient of a scalar with respect to every recorded node.
//!
//! Parameters live outside the tape in a [`ParamStore`] and are loaded as
//! leaves per forward pass, so independent tapes can run on separate workers
//! against the same store.

mod optim;
mod params;
mod tape;

pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamStore};
pub use tape::{sigmoid, softplus, Gradients, Tape, Var};

use thiserror::Error;

pub type Matrix = ndarray::Array2<f64>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EngineError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("segment id {id} out of range for {segments} segments in {op}")]
    SegmentOutOfRange {
        op: &'static str,
        id: usize,
        segments: usize,
    },

    #[error("index {index} out of range for {rows} rows in {op}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        rows: usize,
    },

    #[error("backward requires a 1x1 scalar, got {0:?}")]
    NotScalar((usize, usize)),

    #[error("non-finite gradient produced by `{op}` (node {node})")]
    NonFiniteGradient { op: &'static str, node: usize },

    #[error("non-finite value produced by `{op}` (node {node})")]
    NonFiniteValue { op: &'static str, node: usize },
}
