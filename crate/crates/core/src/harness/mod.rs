//! Experiment plumbing: run configs, disturbance generators, the best safe
//! linear benchmark, safety fuzzing and CSV output.

mod benchmark;
mod config;
mod disturbance;
mod experiments;
mod output;

pub use benchmark::{best_on_grid, best_safe_linear, safe_linear_grid, simulate_linear, Benchmark, GridSpec, LinearTrace, SafeGrid};
pub use config::{
    ControllerConfig, CostConfig, Experiment, ParamsConfig, RunConfig, RunSection, SafetyConfig, ScheduleKind,
    SetConfig, SystemConfig, TOY_CONFIG,
};
pub use disturbance::{AdaptiveStrategy, DisturbanceSpec, DisturbanceStream};
pub use experiments::{
    boundary_distance, fuzz_regimes, regret_curve, safety_fuzz, FuzzSummary, RegimeSummary, RegretEntry, RegretReport,
    Violation, REGRET_HORIZONS,
};
pub use output::{
    fmt_f64, read_trace_disturbances, reproduce, write_fig1_csv, write_regret_csv, write_trace_csv, Figure, Trajectory,
};

use crate::ogd::{ParamError, RunError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Process exit code: 2 for safety or feasibility failures, 3 for bad configs.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 3,
            HarnessError::Run(RunError::Param(ParamError::InvalidManual { .. } | ParamError::ZeroHorizon)) => 3,
            HarnessError::Infeasible(_) | HarnessError::Run(_) => 2,
            HarnessError::Io(_) => 1,
        }
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Io(std::io::Error::other(e.to_string()))
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
