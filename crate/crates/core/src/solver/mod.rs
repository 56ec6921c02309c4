//! Inverse reconstruction: FISTA with fused-lasso regularization over sparse
//! plane stacks, plus a conventional back-propagation baseline.

mod baseline;
mod fista;

pub use baseline::{baseline_reconstruct, baseline_with_model};
pub use fista::{
    fista, write_objective_history, Fista, ObjectDomain, SolveReport, SolverConfig, StepPolicy,
};
