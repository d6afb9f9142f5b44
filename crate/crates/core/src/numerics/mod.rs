//! Function families, feasible sets and the small dense projection QP.

mod feasible;
mod function;
pub mod linalg;
mod qp;

pub use feasible::{BlockCap, FeasibleSet};
pub use function::{EvCost, EvaluationFunction, QuadraticForm};
pub use qp::{solve_projection_qp, HalfSpace, QpSolution};

/// A point or vector in the decision space.
pub type Point = alloc::vec::Vec<f64>;
