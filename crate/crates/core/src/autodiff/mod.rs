//! Dense double-precision tensors, a reverse-mode computation graph, Adam, and a
//! finite-difference gradient checker.
//!
//! Every primitive rejects shape mismatches and any non-finite result, so a NaN
//! can never silently propagate into a parameter update.

mod gradcheck;
mod graph;
mod ops;
mod store;
mod tensor;

pub use gradcheck::{check_gradients, relative_error, GradCheckOptions, GradCheckReport, ParamCheck};
pub use graph::{Gradients, Graph, NodeId};
pub use ops::OpKind;
pub use store::{Adam, ParameterStore};
pub use tensor::Tensor;
