//! Communication accounting for the distributed solvers.
//!
//! Downlink is what the aggregator broadcasts: one bit per congestion event
//! for AIMD (or one bit per bus per event under [`Feedback::PerBus`]), and
//! `bits_per_broadcast` per iteration for ADMM. Uplink budget reports are
//! left out unless `count_reports` is set, in which case every agent sends
//! `report_bits` each iteration.

use serde::{Deserialize, Serialize};

use crate::baselines::{project_to_feasible, AllocationProblem};
use crate::trace::{SolverKind, SolverTrace};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feedback {
    /// One broadcast bit per congestion event serves every bus.
    #[default]
    PerBroadcast,
    /// Each bus is charged one bit per congestion event.
    PerBus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BitAccounting {
    pub feedback: Feedback,
    pub count_reports: bool,
    pub report_bits: u32,
}

impl Default for BitAccounting {
    fn default() -> Self {
        BitAccounting {
            feedback: Feedback::PerBroadcast,
            count_reports: false,
            report_bits: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommsBreakdown {
    /// aggregator → agents
    pub downlink: u64,
    /// agents → aggregator
    pub uplink: u64,
}

impl CommsBreakdown {
    pub fn total(&self) -> u64 {
        self.downlink + self.uplink
    }
}

/// Bits exchanged after `broadcasts` broadcasts and `iterations` iterations.
pub fn bits_after(
    trace: &SolverTrace,
    acct: &BitAccounting,
    broadcasts: u64,
    iterations: u64,
) -> CommsBreakdown {
    let agents = trace.bus_ids.len() as u64;
    let per_broadcast = match (trace.solver, acct.feedback) {
        (SolverKind::Aimd, Feedback::PerBus) => agents * u64::from(trace.bits_per_broadcast),
        _ => u64::from(trace.bits_per_broadcast),
    };
    let uplink = if acct.count_reports {
        iterations * agents * u64::from(acct.report_bits)
    } else {
        0
    };
    CommsBreakdown {
        downlink: broadcasts * per_broadcast,
        uplink,
    }
}

/// Total bits for a completed trace.
pub fn comms_bits(trace: &SolverTrace, acct: &BitAccounting) -> (u64, CommsBreakdown) {
    let b = bits_after(trace, acct, trace.broadcasts, trace.iterations);
    (b.total(), b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BitsToAccuracy {
    pub k: u64,
    pub broadcasts: u64,
    pub bits: u64,
}

/// The earliest sample from which the (projected) iterate stays within `tol`
/// of `reference` for the rest of the trace, and the bits spent by then.
///
/// `None` if the last sample is still outside the tolerance.
pub fn bits_to_accuracy(
    problem: &AllocationProblem,
    trace: &SolverTrace,
    reference: &[f64],
    tol: f64,
    acct: &BitAccounting,
) -> Option<BitsToAccuracy> {
    let caps = problem.capacities();
    let within = |d_bar: &[f64]| {
        let projected = project_to_feasible(d_bar, &caps, problem.e_av);
        problem.allocation_gap(&projected, reference) <= tol
    };
    let mut first = None;
    for s in &trace.samples {
        if within(&s.d_bar) {
            first.get_or_insert(s);
        } else {
            first = None;
        }
    }
    first.map(|s| BitsToAccuracy {
        k: s.k,
        broadcasts: s.broadcasts,
        bits: bits_after(trace, acct, s.broadcasts, s.k).total(),
    })
}
