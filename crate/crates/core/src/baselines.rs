//! Reference solvers for the sharing problem
//!
//! ```text
//!   max Σ_i f_i(d_i)   s.t.   Σ_i d_i = E_av,   0 ≤ d_i ≤ cap_i
//! ```
//!
//! [`central_solve`] is exact water-filling over the merged utility pieces.
//! [`admm_solve`] is scaled-form sharing ADMM: each agent evaluates a
//! proximal step of its own utility, the aggregator averages and updates the
//! single scaled multiplier, then broadcasts it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{Residuals, SolverKind, SolverTrace, TraceSample};
use crate::utility::{Side, UtilityFunction};

#[derive(Debug, Clone)]
pub struct AllocationProblem {
    pub utilities: Vec<UtilityFunction>,
    /// Renewable energy available, kWh.
    pub e_av: f64,
}

impl AllocationProblem {
    pub fn new(utilities: Vec<UtilityFunction>, e_av: f64) -> Result<Self> {
        if utilities.is_empty() {
            return Err(Error::validation("allocation problem", "no utilities"));
        }
        if !(e_av.is_finite() && e_av >= 0.0) {
            return Err(Error::validation(
                "allocation problem",
                format!("e_av must be finite and >= 0, got {e_av}"),
            ));
        }
        Ok(AllocationProblem { utilities, e_av })
    }

    pub fn len(&self) -> usize {
        self.utilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utilities.is_empty()
    }

    pub fn capacities(&self) -> Vec<f64> {
        self.utilities.iter().map(UtilityFunction::capacity).collect()
    }

    pub fn total_capacity(&self) -> f64 {
        self.utilities.iter().map(UtilityFunction::capacity).sum()
    }

    /// Energy that can actually be placed: `min(e_av, Σ cap)`.
    pub fn allocatable(&self) -> f64 {
        self.e_av.min(self.total_capacity())
    }

    pub fn bus_ids(&self) -> Vec<String> {
        self.utilities.iter().map(|u| u.bus_id.clone()).collect()
    }

    /// Total savings of an allocation, recomputed from the utilities.
    pub fn savings(&self, d: &[f64]) -> Result<f64> {
        self.utilities
            .iter()
            .zip(d)
            .map(|(u, &x)| u.eval(x))
            .sum()
    }

    /// Per-bus scale for relative allocation errors: `e_av / N`.
    pub fn fair_share(&self) -> f64 {
        self.e_av / self.len() as f64
    }

    /// Largest `|a_i − b_i|` relative to `e_av / N`.
    pub fn allocation_gap(&self, a: &[f64], b: &[f64]) -> f64 {
        let scale = self.fair_share();
        let worst = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        if scale > 0.0 {
            worst / scale
        } else {
            worst
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub d: Vec<f64>,
    /// grams
    pub savings: f64,
    /// Energy beyond total capacity, left unallocated.
    pub surplus: f64,
    /// Slope of the last piece touched by the fill, if any.
    pub marginal_slope: Option<f64>,
}

/// Exact water-filling.
///
/// All pieces of all utilities are sorted by slope (descending; ties by bus,
/// then piece index) and filled in that order. A group of equal-slope pieces
/// that cannot be filled completely shares the remaining energy in proportion
/// to piece width.
pub fn central_solve(problem: &AllocationProblem) -> Allocation {
    struct Item {
        bus: usize,
        slope: f64,
        width: f64,
    }

    let mut items: Vec<Item> = problem
        .utilities
        .iter()
        .enumerate()
        .flat_map(|(bus, u)| {
            u.pieces().map(move |p| Item {
                bus,
                slope: p.slope,
                width: p.width,
            })
        })
        .collect();
    // stable sort keeps (bus, piece) order within equal slopes
    items.sort_by(|a, b| b.slope.total_cmp(&a.slope));

    let caps = problem.capacities();
    let mut d = vec![0.0; problem.len()];
    let mut remaining = problem.allocatable();
    let mut marginal_slope = None;
    let mut start = 0;
    while start < items.len() && remaining > 0.0 {
        let slope = items[start].slope;
        let end = start
            + items[start..]
                .iter()
                .take_while(|it| it.slope == slope)
                .count();
        let group = &items[start..end];
        let total: f64 = group.iter().map(|it| it.width).sum();
        marginal_slope = Some(slope);
        if total <= remaining {
            for it in group {
                d[it.bus] += it.width;
            }
            remaining -= total;
        } else {
            let frac = remaining / total;
            for it in group {
                d[it.bus] += it.width * frac;
            }
            remaining = 0.0;
        }
        start = end;
    }
    for (x, cap) in d.iter_mut().zip(&caps) {
        *x = x.min(*cap);
    }
    let savings = problem
        .savings(&d)
        .expect("water-filling stays within capacities");
    Allocation {
        d,
        savings,
        surplus: (problem.e_av - problem.total_capacity()).max(0.0),
        marginal_slope,
    }
}

/// [`central_solve`] wrapped in a trace so it can sit next to the iterative
/// solvers in reports. No messages are exchanged.
pub fn oracle_trace(problem: &AllocationProblem) -> Result<SolverTrace> {
    let a = central_solve(problem);
    let kkt = kkt_residual(problem, &a.d)?;
    let mut warnings = Vec::new();
    if a.surplus > 0.0 {
        warnings.push(format!("{} kWh exceeds total capacity and is unallocated", a.surplus));
    }
    Ok(SolverTrace {
        solver: SolverKind::Oracle,
        bus_ids: problem.bus_ids(),
        e_av: problem.e_av,
        iterations: 0,
        congestion_events: Vec::new(),
        broadcasts: 0,
        bits_per_broadcast: 0,
        samples: Vec::new(),
        raw_allocation: a.d.clone(),
        final_allocation: a.d,
        unallocated: a.surplus,
        converged: true,
        residuals: None,
        agent_stats: Vec::new(),
        warnings,
        consensus_spread: kkt.consensus_spread,
        oracle_gap: 0.0,
    })
}

/// Rescales `raw` to sum to `min(e_av, Σ cap)` and clips to capacities,
/// redistributing clipped excess over the remaining buses.
pub fn project_to_feasible(raw: &[f64], caps: &[f64], e_av: f64) -> Vec<f64> {
    let total_cap: f64 = caps.iter().sum();
    let target = e_av.min(total_cap);
    let mut out: Vec<f64> = raw.iter().map(|x| x.max(0.0)).collect();
    let mut fixed = vec![false; out.len()];
    // each pass either finishes or pins at least one more bus to its capacity
    for _ in 0..=out.len() {
        let pinned: f64 = out.iter().zip(&fixed).filter(|(_, f)| **f).map(|(x, _)| x).sum();
        let free_sum: f64 = out.iter().zip(&fixed).filter(|(_, f)| !**f).map(|(x, _)| x).sum();
        let want = target - pinned;
        if want <= 0.0 {
            break;
        }
        let scale_free = |out: &mut Vec<f64>, fixed: &[bool]| {
            if free_sum > 0.0 {
                let s = want / free_sum;
                for (x, _) in out.iter_mut().zip(fixed).filter(|(_, f)| !**f) {
                    *x *= s;
                }
            } else {
                // nothing to scale: spread in proportion to spare capacity
                let spare: f64 = caps.iter().zip(fixed).filter(|(_, f)| !**f).map(|(c, _)| c).sum();
                for ((x, c), _) in out.iter_mut().zip(caps).zip(fixed).filter(|(_, f)| !**f) {
                    *x = want * c / spare;
                }
            }
        };
        scale_free(&mut out, &fixed);
        let mut clipped = false;
        for i in 0..out.len() {
            if !fixed[i] && out[i] >= caps[i] {
                out[i] = caps[i];
                fixed[i] = true;
                clipped = true;
            }
        }
        if !clipped {
            break;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResidual {
    /// `(max − min) / median` of right-derivatives over buses with `0 < d < cap`.
    pub consensus_spread: f64,
    /// `|Σ d − min(e_av, Σ cap)|`, kWh.
    pub feasibility_gap: f64,
    pub interior_buses: usize,
}

pub fn kkt_residual(problem: &AllocationProblem, d: &[f64]) -> Result<KktResidual> {
    let mut slopes = Vec::new();
    for (u, &x) in problem.utilities.iter().zip(d) {
        let cap = u.capacity();
        if !(0.0..=cap).contains(&x) {
            return Err(Error::domain(format!("allocation for bus {:?}", u.bus_id), x, 0.0, cap));
        }
        if x > 0.0 && x < cap {
            slopes.push(u.derivative(x, Side::Right)?);
        }
    }
    let feasibility_gap = (d.iter().sum::<f64>() - problem.allocatable()).abs();
    Ok(KktResidual {
        consensus_spread: relative_spread(&mut slopes),
        feasibility_gap,
        interior_buses: slopes.len(),
    })
}

/// `(max − min) / median`, or 0 for fewer than two values.
pub(crate) fn relative_spread(values: &mut [f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let median = if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    };
    let spread = values[n - 1] - values[0];
    if median > 0.0 {
        spread / median
    } else if spread == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmmConfig {
    pub rho: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: u64,
    pub bits_per_broadcast: u32,
    /// Keep one trace sample every this many iterations.
    pub sample_every: u64,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        AdmmConfig {
            rho: 1.0,
            abs_tol: 1e-6,
            rel_tol: 1e-6,
            max_iter: 100_000,
            bits_per_broadcast: 32,
            sample_every: 1,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rho > 0.0
            && self.abs_tol > 0.0
            && self.rel_tol > 0.0
            && self.max_iter >= 1
            && self.sample_every >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::validation(
                "admm config",
                "need rho > 0, tolerances > 0, max_iter >= 1, sample_every >= 1",
            ))
        }
    }
}

/// `argmax_{0 ≤ x ≤ cap} f(x) − (ρ/2)(x − v)²` for piecewise-linear concave `f`.
///
/// On piece `j` the unconstrained stationary point is `v + σ_j/ρ`; the first
/// piece whose stationary point does not lie past its right end holds the
/// maximiser, either at that point or at the piece's left breakpoint.
pub fn prox_step(u: &UtilityFunction, v: f64, rho: f64) -> f64 {
    let bp = u.breakpoints();
    let n = u.piece_count();
    let past_end = |j: usize| v + u.piece(j).slope / rho > bp[j + 1].d;
    let (mut lo, mut hi) = (0, n);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if past_end(mid) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    if lo == n {
        return u.capacity();
    }
    let candidate = v + u.piece(lo).slope / rho;
    candidate.max(bp[lo].d)
}

/// Scaled-form sharing ADMM.
pub fn admm_solve(problem: &AllocationProblem, cfg: &AdmmConfig) -> Result<SolverTrace> {
    cfg.validate()?;
    let n = problem.len();
    let nf = n as f64;
    let caps = problem.capacities();
    let target = problem.allocatable();
    let z_bar = target / nf;

    let mut x = vec![0.0; n];
    let mut x_bar = 0.0;
    let mut u = 0.0;
    let mut samples = Vec::new();
    let mut residuals = Residuals {
        primal: f64::INFINITY,
        dual: f64::INFINITY,
    };
    let mut converged = false;
    let mut iterations = 0;

    for k in 1..=cfg.max_iter {
        let prev: Vec<f64> = x.iter().map(|xi| xi - x_bar).collect();
        for (i, util) in problem.utilities.iter().enumerate() {
            let v = x[i] - x_bar + z_bar - u;
            x[i] = prox_step(util, v, cfg.rho);
        }
        x_bar = x.iter().sum::<f64>() / nf;
        u += x_bar - z_bar;
        iterations = k;

        let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let z_norm = x
            .iter()
            .map(|xi| (xi - x_bar + z_bar).powi(2))
            .sum::<f64>()
            .sqrt();
        let moved = x
            .iter()
            .zip(&prev)
            .map(|(xi, p)| (xi - x_bar - p).powi(2))
            .sum::<f64>()
            .sqrt();
        residuals = Residuals {
            primal: nf.sqrt() * (x_bar - z_bar).abs(),
            dual: cfg.rho * moved,
        };
        let eps_primal = nf.sqrt() * cfg.abs_tol + cfg.rel_tol * x_norm.max(z_norm);
        let eps_dual = nf.sqrt() * cfg.abs_tol + cfg.rel_tol * cfg.rho * nf.sqrt() * u.abs();
        converged = residuals.primal <= eps_primal && residuals.dual <= eps_dual;

        if k % cfg.sample_every == 0 || converged || k == cfg.max_iter {
            samples.push(TraceSample {
                k,
                broadcasts: k,
                congested: false,
                d: x.clone(),
                d_bar: x.clone(),
                backed_off: vec![false; n],
            });
        }
        if converged {
            break;
        }
    }

    let final_allocation = project_to_feasible(&x, &caps, problem.e_av);
    let mut warnings = Vec::new();
    if !converged {
        warnings.push(format!(
            "admm did not converge in {} iterations (primal {:.3e}, dual {:.3e})",
            cfg.max_iter, residuals.primal, residuals.dual
        ));
    }
    let unallocated = (problem.e_av - problem.total_capacity()).max(0.0);
    if unallocated > 0.0 {
        warnings.push(format!("{unallocated} kWh exceeds total capacity and is unallocated"));
    }
    let oracle = central_solve(problem);
    let kkt = kkt_residual(problem, &final_allocation)?;
    Ok(SolverTrace {
        solver: SolverKind::Admm,
        bus_ids: problem.bus_ids(),
        e_av: problem.e_av,
        iterations,
        congestion_events: Vec::new(),
        broadcasts: iterations,
        bits_per_broadcast: cfg.bits_per_broadcast,
        samples,
        raw_allocation: x,
        oracle_gap: problem.allocation_gap(&final_allocation, &oracle.d),
        final_allocation,
        unallocated,
        converged,
        residuals: Some(residuals),
        agent_stats: Vec::new(),
        warnings,
        consensus_spread: kkt.consensus_spread,
    })
}
