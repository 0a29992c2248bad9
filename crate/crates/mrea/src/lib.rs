//! Battery energy arbitrage optimization across one or several day-ahead
//! markets connected by interconnectors.
//!
//! The library provides four single-market dispatch models (epigraph LP,
//! MILP, the noDis heuristic, and backward-induction DP), the multi-region
//! MILP with shared charge/discharge mode binaries, and the surrounding
//! machinery: price/flow ingestion, rolling-horizon backtests, sample
//! average approximation over price scenarios, Monte Carlo runtime
//! benchmarking, and cycle accounting.

pub mod battery;
pub mod config;
pub mod market;
pub mod metrics;
pub mod multi_region;
pub mod report;
pub mod sim;
pub mod single_region;
pub mod solver;

use thiserror::Error;

/// Unified error type across the crate.
#[derive(Debug, Error)]
pub enum MreaError {
    #[error("infeasible SOC at step {step}: {value} outside [{lo}, {hi}]")]
    InfeasibleSoc {
        step: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("energy change {value} outside ramp bounds [{lo}, {hi}]")]
    RampViolation { value: f64, lo: f64, hi: f64 },
    #[error("parse error in {path}, line {line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("timestamp gaps in {path} at {}", locations.join(", "))]
    Gap {
        path: String,
        locations: Vec<String>,
    },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("DP grid error: {0}")]
    Grid(String),
    #[error("solver failure: {status:?}")]
    SolverFailure { status: solver::SolveStatus },
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MreaError>;
