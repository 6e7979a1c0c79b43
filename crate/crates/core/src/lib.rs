//! Numerical core for studying edge detection in convolutional networks.
//!
//! The crate is `no_std` and only needs `alloc`. It contains a small
//! reverse-mode autodiff engine, the edge-detection unit and the standard
//! layers around it, synthetic edge/noise stimuli, colour transforms, the
//! training loops and the neuron probing tools. File formats, dataset IO and
//! the command line live in the `edgelab` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod datasets;
pub mod error;
pub mod graph;
mod kernels;
pub mod layers;
pub mod model;
pub mod optim;
pub mod probe;
pub mod real;
pub mod rng;
pub mod robustness;
pub mod stimulus;
pub mod tensor;
pub mod trainer;
pub mod transforms;

pub use error::{Error, Result};
pub use graph::{BatchStats, Gradients, Graph, Padding, Var};
pub use kernels::Pad2d;
pub use layers::{edge_forward, edge_forward_zeromean, EdgeDetectLayer};
pub use model::{FirstLayer, ForwardOptions, LayerSpec, LossKind, Mode, Model, ModelSpec, Table1Row};
pub use optim::{Optimizer, OptimizerConfig};
pub use real::{DType, Real};
pub use stimulus::{ColorRule, EdgeStyle, StimulusBatch};
pub use tensor::Tensor;
