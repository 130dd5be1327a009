//! Reverse-mode automatic differentiation over dense 2-D tensors.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its value
//! and the rule needed to push gradients back to its inputs. Trainable
//! weights live in a [`ParamStore`] that the graph borrows, so building a
//! graph per sentence never copies the parameters. [`Graph::backward`]
//! walks the tape in reverse and returns [`Gradients`] for intermediate
//! nodes and parameters alike.
//!
//! Tensors follow a row-vector convention: a sequence of `m` feature
//! vectors of width `d` is an `m × d` matrix, and a linear layer is
//! `x · W + b` with `W` of shape `d_in × d_out`.

mod adam;
mod graph;
mod params;
mod tensor;

pub use adam::{clip_global_norm, Adam, AdamConfig};
pub(crate) use graph::logsumexp_slice;
pub use graph::{CustomOp, Gradients, Graph, NodeId};
pub use params::{GradBuffer, ParamId, ParamStore};
pub use tensor::Tensor;
