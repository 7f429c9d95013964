//! Label-distribution-aware CVaR training objectives for long-tailed
//! classification, plus the reference baselines, a small MLP trainer and
//! evaluation utilities.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod bounds;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod solver;

pub use bounds::{feasible_tau_range, optimal_bounds, BoundParams, ClassBounds};
pub use data::{LabeledDataset, SynthConfig};
pub use error::{Error, Result, TauInterval};
pub use losses::{LabCvarParams, LossOutput, LossSpec, Objective, TauSpec};
pub use metrics::EvalReport;
pub use model::{MlpModel, TrainConfig};
pub use numerics::{Matrix, RngState};
pub use solver::{solve_lab_cvar, WeightBox, WeightSolution};
