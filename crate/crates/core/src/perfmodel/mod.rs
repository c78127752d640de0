//! Analytic iteration-time model.
//!
//! Per layer, the forward time overlaps the interior computation with the
//! halo exchange:
//!
//! `FP_l = max{Comp_l(D_main), sum_d 2 SR(D_halo_d)} + Comp_l(D_halo)`
//!
//! and likewise for backward-data (`BD_l`) and backward-filter (`BF_l`).
//! Gradient allreduces overlap the backward pass:
//!
//! `Cost = sum FP_l + max{sum (BD_l + BF_l), sum AR_l(theta_l)}`.

mod comp;
mod cost;
mod fit;

use thiserror::Error;

pub use comp::{phase_domain, CompModel, KernelTimeTable, Lookup, ProportionalModel, TableRow, WorkBasis};
pub use cost::{
    iteration_cost, overlapped, synthesize_table, total_cost, CostBreakdown, LayerCost, PerfModels, ReportRow,
};
pub use fit::{
    fit_allreduce, fit_link, read_allreduce_samples, read_pingpong_samples, AllreduceSample, CollectiveModel,
    LinkModel, PingPongSample,
};

#[derive(Debug, Error)]
pub enum PerfError {
    #[error("need {needed}, got {got}")]
    InsufficientData { needed: String, got: usize },
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("no table entry comparable to {kind} {phase} {shape}")]
    NoComparableEntry { kind: String, phase: String, shape: String },
    #[error("{0}")]
    Parse(String),
    #[error(transparent)]
    Model(#[from] Box<crate::error::Error>),
}

impl From<crate::error::Error> for PerfError {
    fn from(e: crate::error::Error) -> Self {
        PerfError::Model(Box::new(e))
    }
}
