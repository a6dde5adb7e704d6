//! Reverse-mode automatic differentiation with second-order support.

mod fd;
mod graph;
pub mod kernels;
mod tensor;

pub use fd::{directional_derivative, finite_difference_gradient, relative_error};
pub use graph::{ExprGraph, NodeId, Op};
pub use tensor::{numel, Tensor};

/// Activation nonlinearities available to models.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    /// σ(x) = (max{0,x})²; C¹ with derivative 2·max{0,x}.
    Requ,
    Softmax { axis: usize },
}

impl ActivationKind {
    pub fn apply<F: crate::scalar::Scalar>(
        self,
        g: &mut ExprGraph<F>,
        x: NodeId,
    ) -> Result<NodeId, crate::error::GraphError> {
        match self {
            ActivationKind::Relu => g.relu(x),
            ActivationKind::Requ => g.requ(x),
            ActivationKind::Softmax { axis } => g.softmax(x, axis),
        }
    }
}
