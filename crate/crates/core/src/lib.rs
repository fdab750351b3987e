//! Recursive multilevel proximal trust-region method for `F = f + φ` with
//! smooth `f` and convex, separable `φ`.

pub mod linalg;
pub mod prox;
pub mod smooth;
pub mod spg;
pub mod transfer;
pub mod trust_region;

pub use prox::{stationarity_h, ProxError, ProxFunction, ProxSpec};
pub use smooth::{
    build_coarse_model, taylor_decrease, CoarseSmoothModel, Counters, CountingObjective, Curvature,
    CurvatureMode, EvalError, SmoothObjective,
};
pub use spg::{boundary_alpha, cauchy_alpha, spg_solve, SpgParams, SpgResult};
pub use transfer::{TransferError, TransferKind, TransferOperator, TransferSpec};
pub use trust_region::{
    accept_and_update, model_choice, rmntr, solve_single_level, EngineError, LevelStack, ModelKind,
    SolveResult, SolveStatus, SuccessClass, TRParams, TraceRow, TrustRegionTrace,
};
