//! Reverse-mode automatic differentiation on batched `f64` tensors.
//!
//! A deliberately small engine: tensors are dense 2-D arrays
//! (`batch × width`), and the op set is closed over exactly what the
//! networks and losses in this crate need — matrix multiply,
//! broadcast add, elementwise multiply, `relu`, `tanh`, `cos`, `mean`,
//! `square`, `abs`, elementwise max, and scalar scaling. No dynamic
//! shapes, no GPU, no mixed precision.
//!
//! [`Tape`] records operations eagerly (values are computed as nodes
//! are pushed), then [`Tape::backward`] sweeps the record once in
//! reverse to produce gradients with respect to every parameter leaf.
//! Gradients are verified against central finite differences in the
//! test suite; see [`central_difference`].

mod adam;
mod tape;

pub use adam::AdamState;
pub use tape::{central_difference, NodeId, Tape, Tensor};
