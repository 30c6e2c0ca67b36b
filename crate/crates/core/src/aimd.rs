//! Unsynchronised stochastic AIMD allocation.
//!
//! Every iteration the aggregator compares `Σ d_i` with `E_av`. Below it, all
//! agents add `α`. At or above it (a congestion event) the aggregator
//! broadcasts one bit and each agent independently multiplies its budget by
//! `β` with probability
//!
//! ```text
//!   p_i = Γ / (d̄_i · g(f′_i(d̄_i)))
//! ```
//!
//! and adds `α` otherwise, where `d̄_i` is the mean of the agent's budget over
//! all congestion events so far and `g` an optional strictly increasing
//! privacy mask. The agents' `d̄_i` settle where the masked derivatives agree,
//! which is the optimality condition of the sharing problem.
//!
//! The aggregator only ever sees `Σ d_i`; utilities stay with the agents.
//! Each agent draws from its own ChaCha stream keyed by `(seed, agent index)`
//! and draws exactly once per congestion event, so a run is a pure function
//! of the problem and the config.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{central_solve, kkt_residual, project_to_feasible, AllocationProblem};
use crate::error::{Error, Result};
use crate::trace::{AgentStats, SolverKind, SolverTrace, TraceSample};
use crate::utility::{Side, UtilityFunction};

pub use crate::comms::comms_bits;

/// Transform applied to `f′` inside the backoff probability.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PrivacyMask {
    #[default]
    Identity,
    /// `g(x) = a·x + b`
    Affine { a: f64, b: f64 },
    /// `g(x) = x^p`
    Power { p: f64 },
}

impl PrivacyMask {
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            PrivacyMask::Identity => x,
            PrivacyMask::Affine { a, b } => a * x + b,
            PrivacyMask::Power { p } => x.powf(p),
        }
    }

    /// Masks must be strictly increasing and non-negative on `x ≥ 0`.
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            PrivacyMask::Identity => true,
            PrivacyMask::Affine { a, b } => a > 0.0 && b >= 0.0 && a.is_finite() && b.is_finite(),
            PrivacyMask::Power { p } => p > 0.0 && p.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::validation(
                "privacy mask",
                format!("{self:?} is not strictly increasing and non-negative"),
            ))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AimdConfig {
    /// Additive increase per iteration, kWh.
    pub alpha: f64,
    /// Multiplicative decrease factor.
    pub beta: f64,
    /// Common gain `Γ`. `None` picks `0.5 · min_i(last slope of f_i) · E_av / N`.
    pub gamma_gain: Option<f64>,
    pub k_max: u64,
    pub seed: u64,
    pub mask: PrivacyMask,
    /// Keep a trace sample every this many congestion events.
    pub sample_every: u64,
}

impl Default for AimdConfig {
    fn default() -> Self {
        AimdConfig {
            alpha: 0.01,
            beta: 0.5,
            gamma_gain: None,
            k_max: 1_000_000,
            seed: 0,
            mask: PrivacyMask::Identity,
            sample_every: 10,
        }
    }
}

impl AimdConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::validation("aimd config", m.to_string()));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be > 0");
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad("beta must lie in (0, 1)");
        }
        if let Some(g) = self.gamma_gain {
            if !(g > 0.0 && g.is_finite()) {
                return bad("gamma_gain must be > 0");
            }
        }
        if self.k_max < 1 {
            return bad("k_max must be >= 1");
        }
        if self.sample_every < 1 {
            return bad("sample_every must be >= 1");
        }
        self.mask.validate()
    }

    /// The gain actually used for `problem`.
    pub fn resolved_gain(&self, problem: &AllocationProblem) -> f64 {
        self.gamma_gain.unwrap_or_else(|| default_gain(problem))
    }
}

/// `0.5 · min_i(slope of the last piece of f_i) · E_av / N`.
pub fn default_gain(problem: &AllocationProblem) -> f64 {
    let min_slope = problem
        .utilities
        .iter()
        .map(UtilityFunction::min_slope)
        .fold(f64::INFINITY, f64::min);
    0.5 * min_slope * problem.fair_share()
}

/// One agent's budget and its congestion-time statistics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AgentState {
    /// Current budget, kWh.
    pub d: f64,
    pub n_congestions: u64,
    sum_at_congestion: f64,
}

impl AgentState {
    /// Mean of `d` over recorded congestion events; 0 before the first.
    pub fn d_bar(&self) -> f64 {
        if self.n_congestions == 0 {
            0.0
        } else {
            self.sum_at_congestion / self.n_congestions as f64
        }
    }

    /// Adds the current budget to the congestion-time average.
    pub fn record_congestion(&mut self) {
        self.n_congestions += 1;
        self.sum_at_congestion += self.d;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backoff {
    pub p: f64,
    /// The raw ratio was outside `[0, 1]` or undefined.
    pub clamped: bool,
}

/// Backoff probability of an agent at a congestion event.
///
/// Uses the right-derivative at `d̄`. An agent at or beyond capacity has zero
/// marginal value and backs off surely, as does an agent with `d̄ = 0`.
pub fn backoff_probability(
    agent: &AgentState,
    u: &UtilityFunction,
    gamma_gain: f64,
    mask: PrivacyMask,
) -> Backoff {
    let d_bar = if agent.n_congestions == 0 { agent.d } else { agent.d_bar() };
    if d_bar <= 0.0 || d_bar >= u.capacity() {
        return Backoff { p: 1.0, clamped: true };
    }
    let slope = u
        .derivative(d_bar, Side::Right)
        .expect("d_bar checked against capacity");
    let masked = mask.apply(slope);
    if !(masked > 0.0) {
        return Backoff { p: 1.0, clamped: true };
    }
    let raw = gamma_gain / (d_bar * masked);
    Backoff {
        p: raw.clamp(0.0, 1.0),
        clamped: !(0.0..=1.0).contains(&raw),
    }
}

fn agent_rng(seed: u64, agent: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(agent as u64);
    rng
}

pub fn aimd_solve(problem: &AllocationProblem, cfg: &AimdConfig) -> Result<SolverTrace> {
    cfg.validate()?;
    let n = problem.len();
    let gain = cfg.resolved_gain(problem);
    let e_av = problem.e_av;

    let mut agents = vec![AgentState::default(); n];
    let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|i| agent_rng(cfg.seed, i)).collect();
    let mut stats = vec![AgentStats::default(); n];
    let mut congestion_events = Vec::new();
    let mut samples = Vec::new();
    let mut backed_off = vec![false; n];
    let mut all_clamped_everywhere = true;

    for k in 1..=cfg.k_max {
        let total: f64 = agents.iter().map(|a| a.d).sum();
        let congested = total >= e_av;
        if !congested {
            for a in &mut agents {
                a.d += cfg.alpha;
            }
            backed_off.iter_mut().for_each(|b| *b = false);
        } else {
            congestion_events.push(k);
            let mut all_clamped = true;
            for (i, a) in agents.iter_mut().enumerate() {
                a.record_congestion();
                let b = backoff_probability(a, &problem.utilities[i], gain, cfg.mask);
                let draw: f64 = rngs[i].random();
                let s = &mut stats[i];
                s.congestion_events += 1;
                s.expected_backoffs += b.p;
                s.backoff_variance += b.p * (1.0 - b.p);
                if b.clamped {
                    s.clamp_events += 1;
                } else {
                    all_clamped = false;
                }
                backed_off[i] = draw < b.p;
                if backed_off[i] {
                    s.backoffs += 1;
                    a.d *= cfg.beta;
                } else {
                    a.d += cfg.alpha;
                }
            }
            all_clamped_everywhere &= all_clamped;
        }

        let events = congestion_events.len() as u64;
        let sample_now = (congested && events % cfg.sample_every == 0) || k == cfg.k_max;
        if sample_now {
            samples.push(TraceSample {
                k,
                broadcasts: events,
                congested,
                d: agents.iter().map(|a| a.d).collect(),
                d_bar: agents.iter().map(AgentState::d_bar).collect(),
                backed_off: backed_off.clone(),
            });
        }
    }

    let mut warnings = Vec::new();
    let raw: Vec<f64> = if congestion_events.is_empty() {
        warnings.push(format!(
            "no congestion event in {} iterations; reporting current budgets",
            cfg.k_max
        ));
        agents.iter().map(|a| a.d).collect()
    } else {
        agents.iter().map(AgentState::d_bar).collect()
    };
    if !congestion_events.is_empty() && all_clamped_everywhere {
        warnings.push(
            "every backoff probability was clamped at every congestion event; \
             backoff degenerated to synchronised halving"
                .to_string(),
        );
    }
    let unallocated = (e_av - problem.total_capacity()).max(0.0);
    if unallocated > 0.0 {
        warnings.push(format!("{unallocated} kWh exceeds total capacity and is unallocated"));
    }

    let final_allocation = project_to_feasible(&raw, &problem.capacities(), e_av);
    let oracle = central_solve(problem);
    let kkt = kkt_residual(problem, &final_allocation)?;
    Ok(SolverTrace {
        solver: SolverKind::Aimd,
        bus_ids: problem.bus_ids(),
        e_av,
        iterations: cfg.k_max,
        broadcasts: congestion_events.len() as u64,
        bits_per_broadcast: 1,
        congestion_events,
        samples,
        raw_allocation: raw,
        oracle_gap: problem.allocation_gap(&final_allocation, &oracle.d),
        final_allocation,
        unallocated,
        converged: true,
        residuals: None,
        agent_stats: stats,
        warnings,
        consensus_spread: kkt.consensus_spread,
    })
}
