//! Minimal differentiable tensor core: rank-4 tensors, a recording graph with
//! reverse-mode gradients, parameter storage, checkpoints and a
//! finite-difference gradient checker.

pub mod checkpoint;
pub mod gradcheck;
mod graph;
mod kernels;
mod params;
mod tensor;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, ParamCheck};
pub use graph::{Gradients, Graph, Var};
pub use params::{ActivationMode, LayerKind, LayerParams, ParamId, ParamStore};
pub use tensor::{Element, Shape, Tensor};
