//! Dispatch over the three solvers.

use serde::{Deserialize, Serialize};

use crate::aimd::{aimd_solve, AimdConfig};
use crate::baselines::{admm_solve, oracle_trace, AdmmConfig, AllocationProblem};
use crate::error::Result;
use crate::trace::{SolverKind, SolverTrace};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub aimd: AimdConfig,
    pub admm: AdmmConfig,
}

pub fn solve(kind: SolverKind, problem: &AllocationProblem, settings: &SolverSettings) -> Result<SolverTrace> {
    let trace = match kind {
        SolverKind::Aimd => aimd_solve(problem, &settings.aimd),
        SolverKind::Admm => admm_solve(problem, &settings.admm),
        SolverKind::Oracle => oracle_trace(problem),
    };
    trace.map_err(|e| e.in_module(kind.name()))
}
