//! DC optimal power flow toolkit.
//!
//! The crate bundles everything needed to train and evaluate a learned
//! dispatch predictor whose outputs stay feasible for the original grid
//! limits:
//!
//! * [`grid`] — case-file parsing ([MATPOWER subset and a native JSON
//!   schema](grid::parse_case)) and the susceptance/incidence matrices.
//! * [`solver`] — a primal-dual interior-point solver for the DC-OPF
//!   quadratic program, plus an l1-projection LP for restoring
//!   feasibility of predicted dispatches.
//! * [`calibration`] — PTDF sensitivities, per-line error-amplification
//!   factors and the preventive calibration plans built from them.
//! * [`dataset`] — load sampling, scaling-factor encoding and the binary
//!   train/test dataset files.
//! * [`mlp`] — a small feed-forward network (ReLU hidden layers, sigmoid
//!   output) trained with SGD+momentum on a composite loss that includes
//!   a differentiable line-violation penalty.
//! * [`pipeline`] — the end-to-end prediction path: load → scaling
//!   factors → generations (slack by balance) → angles → feasibility
//!   check → optional l1-projection fallback.
//! * [`report`] — evaluation harness producing per-instance CSV rows and
//!   aggregate feasibility/cost/speedup metrics.

pub mod calibration;
pub mod dataset;
pub mod grid;
pub mod mlp;
pub mod pipeline;
pub mod report;
pub mod solver;

pub use calibration::{CalibrationPlan, EffectiveLimits, SensitivityMatrix};
pub use grid::{AdmittanceSystem, CaseFormat, PowerNetwork};
pub use mlp::{MlpModel, TrainConfig};
pub use pipeline::PredictionResult;
pub use solver::{DcOpfProblem, DispatchSolution, SolveStatus, SolverOptions};
