//! Reverse-mode automatic differentiation over [`Tensor`](crate::Tensor)s.

mod check;
mod graph;
mod params;

pub use check::{check_against, grad_check, GradCheckConfig, GradCheckReport, ParamCheck};
pub use graph::{CustomOp, Graph, Var};
pub use params::{Gradients, ParamId, ParamStore, Parameter};
