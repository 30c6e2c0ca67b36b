//! Solver traces shared by the AIMD and ADMM simulations.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io::csv_bytes;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Aimd,
    Admm,
    Oracle,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Aimd => "aimd",
            SolverKind::Admm => "admm",
            SolverKind::Oracle => "oracle",
        }
    }
}

impl std::fmt::Display for SolverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Snapshot of all agents at iteration `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub k: u64,
    /// Broadcasts sent by the aggregator up to and including `k`.
    pub broadcasts: u64,
    pub congested: bool,
    /// Instantaneous budgets `d_i(k)`.
    pub d: Vec<f64>,
    /// Running averages at congestion (AIMD) or the current iterate (ADMM).
    pub d_bar: Vec<f64>,
    pub backed_off: Vec<bool>,
}

/// Per-agent backoff bookkeeping for AIMD.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentStats {
    pub congestion_events: u64,
    pub backoffs: u64,
    /// Sum of the backoff probabilities drawn against.
    pub expected_backoffs: f64,
    /// Sum of `p(1 − p)` over the same draws.
    pub backoff_variance: f64,
    /// Draws where the raw probability fell outside `[0, 1]` or `d̄` was 0.
    pub clamp_events: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    pub solver: SolverKind,
    pub bus_ids: Vec<String>,
    pub e_av: f64,
    /// Iterations actually run.
    pub iterations: u64,
    /// Iterations at which the aggregator signalled congestion.
    pub congestion_events: Vec<u64>,
    /// Aggregator broadcasts: congestion signals for AIMD, coupling updates for ADMM.
    pub broadcasts: u64,
    /// Size of one aggregator broadcast in bits.
    pub bits_per_broadcast: u32,
    pub samples: Vec<TraceSample>,
    /// Converging quantity before projection: `d̄` for AIMD, `x` for ADMM.
    pub raw_allocation: Vec<f64>,
    /// Feasible allocation, summing to `min(e_av, Σ capacity)`.
    pub final_allocation: Vec<f64>,
    /// Energy that could not be placed because it exceeds total capacity.
    pub unallocated: f64,
    pub converged: bool,
    pub residuals: Option<Residuals>,
    pub agent_stats: Vec<AgentStats>,
    pub warnings: Vec<String>,
    /// Relative spread of right-derivatives over interior buses.
    pub consensus_spread: f64,
    /// Largest per-bus distance to the oracle allocation, relative to `e_av / N`.
    pub oracle_gap: f64,
}

impl SolverTrace {
    /// Trace CSV: one row per (sample, bus).
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let solver = self.solver.name();
        let rows = self.samples.iter().flat_map(|s| {
            self.bus_ids.iter().enumerate().map(move |(i, bus)| {
                vec![
                    solver.to_string(),
                    s.k.to_string(),
                    bus.clone(),
                    s.d[i].to_string(),
                    s.d_bar[i].to_string(),
                    u8::from(s.congested).to_string(),
                    u8::from(s.backed_off[i]).to_string(),
                ]
            })
        });
        csv_bytes(
            ["solver", "k", "bus_id", "d", "d_bar", "congested", "backed_off"],
            rows,
        )
    }
}
