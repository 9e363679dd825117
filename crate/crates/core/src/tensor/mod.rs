//! Minimal reverse-mode autodiff over 2-D arrays.
//!
//! Every value in a [`Graph`] is an `ndarray::Array2` of a [`Real`] scalar
//! (`f32` for training, `f64` for the gradient-check suite). Graphs are
//! rebuilt per step (define-by-run); parameters live in a [`ParamStore`] and
//! are referenced by id so one parameter used at several sites accumulates a
//! single gradient.

mod graph;
mod optim;
mod params;
mod real;

pub use graph::{Graph, Gradients, Var};
pub use optim::AdamW;
pub use params::{init, ParamId, ParamStore};
pub use real::Real;
