//! Reverse-mode differentiation: the tape, parameter stores, and a
//! finite-difference checker.

mod gradcheck;
mod graph;
mod params;

pub use gradcheck::{
    finite_difference_check, finite_difference_report, relative_error, Coverage, FdEntry, FdOptions,
    FdReport,
};
pub use graph::{to_array2, Gradients, Graph, LeafKind, Var, MIN_NORM};
pub use params::{BoundParams, ParamStore};

pub(crate) use graph::unfold_out_len;
