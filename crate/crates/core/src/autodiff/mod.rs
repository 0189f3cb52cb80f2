//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every primitive applied to its [`Var`]s; calling
//! [`Graph::backward`] on a scalar node returns exact gradients for the
//! differentiable leaves. Primitives: matmul, add, relu, concat, reshape,
//! scalar multiplication, sum, exp, ln, log-softmax and softmax
//! cross-entropy.

mod graph;
pub mod loss;
mod optim;
mod tensor;

pub use graph::{GradMap, Graph, Var};
pub use loss::{argmax, cross_entropy, log_softmax, softmax};
pub use optim::{Sgd, Velocity};
pub use tensor::{affine, l2_norm, Tensor};
