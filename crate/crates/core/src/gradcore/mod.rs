//! Differentiable operator set, parameter store, finite-difference gradient
//! oracle and tensor serialization.
//!
//! Everything the network needs is expressed as operations recorded on a
//! [`Graph`]; [`Graph::backward`] replays them in reverse to produce
//! gradients for every leaf.

mod gradcheck;
mod graph;
mod ops;
mod params;
pub mod serialize;
mod tensor;

pub use gradcheck::{grad_check, grad_check_params, ErrorMetric, GradCheckConfig, GradCheckReport, InputReport};
pub use graph::{Gradients, Graph, SoftmaxAxis, Var};
pub use params::{Parameter, ParameterSet};
pub use tensor::{Real, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("{op}: {axis} axis mismatch, left {left:?} vs right {right:?}")]
    Mismatch {
        op: &'static str,
        axis: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: kernel {kernel} does not fit {axis} extent {extent} (padding {pad})")]
    KernelTooLarge {
        op: &'static str,
        axis: &'static str,
        kernel: usize,
        extent: usize,
        pad: usize,
    },
    #[error("{op}: unsupported rank {rank}")]
    Rank { op: &'static str, rank: usize },
    #[error("shape {shape:?} needs {} elements, found {found}", shape.iter().product::<usize>())]
    ElementCount { shape: Vec<usize>, found: usize },
    #[error("{op}: invalid argument: {detail}")]
    Invalid { op: &'static str, detail: String },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParameter(String),
    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("serialization: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, GradError>;
