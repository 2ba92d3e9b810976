//! Reverse-mode automatic differentiation and its finite-difference oracle.

mod graph;
mod gradcheck;

pub use graph::{permute_index, Bindings, Graph, Var};
pub use gradcheck::{central_differences, gradcheck, gradcheck_all, gradcheck_widened, GradcheckOptions, GradcheckReport, Stencil};
