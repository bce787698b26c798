//! Discrete-time simulator and scheduling laboratory for vehicular
//! sensing/uploading at a roadside unit (RSU).
//!
//! Vehicles sense categorized information, queue it in a multi-class
//! M/G/1 priority queue, and upload it over a V2I link whose reliability
//! is governed by an SNR-wall predicate. Applications request *views*
//! (requirement matrices over vehicle/category pairs); each fused view is
//! scored by the Age-of-View metric, a weighted blend of normalized
//! timeliness, completeness deficit, and normalized consistency.
//!
//! The decision layer is pluggable: scripted baselines (random, static,
//! greedy-sensing) or per-vehicle actor-critic agents trained with
//! difference rewards, combined with a greedy bandwidth allocator at the
//! RSU. Runs are fully seeded and reproduce byte-identical metric CSVs.

// Validation uses `!(x > 0.0)`-style guards on purpose: they reject NaN
// along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod allocation;
pub mod aov;
pub mod channel;
pub mod config;
pub mod engine;
pub mod mobility;
pub mod nn;
pub mod queueing;
pub mod rng;
pub mod types;
pub mod views;

pub use config::{load_config, SimulationConfig};
pub use engine::{RunMetrics, SlotOutcome};
pub use types::{CategoryParams, DataItem, Point, Rsu, SimClock, VehicleState};

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("infeasible parameter: {0}")]
    Infeasible(String),

    #[error("trajectory ingest error at line {line}: {message}")]
    Ingest { line: usize, message: String },

    #[error("constraint {constraint} violated at slot {slot}: {detail}")]
    ConstraintViolation {
        constraint: &'static str,
        slot: u32,
        detail: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("TOML parse error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
