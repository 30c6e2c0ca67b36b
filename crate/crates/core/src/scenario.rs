//! End-to-end scenario runs: config → fleet → utilities → solvers → report.
//!
//! A scenario is a single JSON file. Relative paths inside it are resolved
//! against the directory holding the file. Every output is written with an
//! atomic rename, and `report.json` goes last, so a directory without it
//! holds a partial run. Runtimes appear only in `report.json`; the CSV files
//! are a pure function of config and seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::aimd::AimdConfig;
use crate::baselines::{central_solve, kkt_residual, AdmmConfig, AllocationProblem, KktResidual};
use crate::comms::{bits_to_accuracy, comms_bits, BitAccounting, CommsBreakdown, Feedback};
use crate::error::{Error, Result};
use crate::forecast::{run_with_uncertainty, ForecastSeries, UncertaintyModel, UncertaintyReport};
use crate::io::{csv_bytes, write_atomic};
use crate::models::{EmissionModel, EnergyModel};
use crate::routes::{discretize, load_fleet, validate_fleet, SectionedRoute};
use crate::solver::{solve, SolverSettings};
use crate::trace::{SolverKind, SolverTrace};
use crate::utility::{build_utility, section_values, ObjectiveMode, UtilityFunction};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverChoice {
    Aimd,
    Admm,
    Oracle,
    #[default]
    All,
}

impl SolverChoice {
    /// Solvers to run, in report order.
    pub fn kinds(self) -> Vec<SolverKind> {
        match self {
            SolverChoice::Aimd => vec![SolverKind::Aimd],
            SolverChoice::Admm => vec![SolverKind::Admm],
            SolverChoice::Oracle => vec![SolverKind::Oracle],
            SolverChoice::All => vec![SolverKind::Oracle, SolverKind::Admm, SolverKind::Aimd],
        }
    }
}

impl FromStr for SolverChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aimd" => Ok(SolverChoice::Aimd),
            "admm" => Ok(SolverChoice::Admm),
            "oracle" => Ok(SolverChoice::Oracle),
            "all" => Ok(SolverChoice::All),
            other => Err(Error::Config(format!(
                "unknown solver {other:?} (expected aimd, admm, oracle or all)"
            ))),
        }
    }
}

/// Takes `E_av` from one day of a forecast file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastSource {
    pub path: PathBuf,
    /// Day whose predicted energy is used; the last record if absent.
    #[serde(default)]
    pub day: Option<String>,
    #[serde(default)]
    pub capacity_norm: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintySpec {
    pub model: UncertaintyModel,
    #[serde(default = "default_trials")]
    pub trials: u64,
    #[serde(default = "default_uncertainty_solver")]
    pub solver: SolverKind,
}

fn default_trials() -> u64 {
    1000
}

fn default_uncertainty_solver() -> SolverKind {
    SolverKind::Oracle
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_match_tolerance() -> f64 {
    0.02
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Fleet JSON file.
    pub fleet: PathBuf,
    #[serde(default)]
    pub energy_model: EnergyModel,
    pub emission_model: EmissionModel,
    #[serde(default)]
    pub objective_mode: ObjectiveMode,
    /// Available energy in kWh. Exactly one of `e_av` and `forecast`.
    #[serde(default)]
    pub e_av: Option<f64>,
    #[serde(default)]
    pub forecast: Option<ForecastSource>,
    #[serde(default)]
    pub solver: SolverChoice,
    #[serde(default)]
    pub aimd: AimdConfig,
    #[serde(default)]
    pub admm: AdmmConfig,
    #[serde(default)]
    pub bits: BitAccounting,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Seed for AIMD; overrides `aimd.seed`.
    #[serde(default)]
    pub seed: u64,
    /// Extra `E_av` values solved with the oracle only.
    #[serde(default)]
    pub sweep: Vec<f64>,
    #[serde(default)]
    pub uncertainty: Option<UncertaintySpec>,
    /// Wall-clock budget per solver in seconds. Slower runs are flagged.
    #[serde(default)]
    pub time_budget_s: BTreeMap<SolverKind, f64>,
    /// Oracle gap at which bits are compared between solvers.
    #[serde(default = "default_match_tolerance")]
    pub match_tolerance: f64,
}

impl ScenarioConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            context: format!("{origin}:{}:{}", e.line(), e.column()),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    /// Makes relative paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.fleet);
        fix(&mut self.output_dir);
        if let Some(f) = &mut self.forecast {
            fix(&mut f.path);
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.e_av, &self.forecast) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("give either e_av or forecast, not both".into()))
            }
            (None, None) => return Err(Error::Config("one of e_av or forecast is required".into())),
            (Some(e), None) if !(e.is_finite() && *e >= 0.0) => {
                return Err(Error::Config(format!("e_av must be >= 0, got {e}")))
            }
            _ => {}
        }
        if !self.fleet.is_file() {
            return Err(Error::Config(format!("fleet file {} does not exist", self.fleet.display())));
        }
        if let Some(f) = &self.forecast {
            if !f.path.is_file() {
                return Err(Error::Config(format!(
                    "forecast file {} does not exist",
                    f.path.display()
                )));
            }
        }
        if let Some(e) = self.sweep.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
            return Err(Error::Config(format!("sweep values must be >= 0, got {e}")));
        }
        if let Some((k, t)) = self.time_budget_s.iter().find(|(_, t)| !(**t > 0.0)) {
            return Err(Error::Config(format!("time budget for {k} must be > 0, got {t}")));
        }
        if !(self.match_tolerance > 0.0) {
            return Err(Error::Config("match_tolerance must be > 0".into()));
        }
        self.aimd.validate().map_err(|e| e.in_module("aimd"))?;
        self.admm.validate().map_err(|e| e.in_module("admm"))?;
        if let Some(u) = &self.uncertainty {
            u.model.validate().map_err(|e| e.in_module("forecast"))?;
        }
        Ok(())
    }
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub solver: Option<SolverChoice>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSummary {
    pub e_av: f64,
    pub bus_ids: Vec<String>,
    pub capacities_kwh: Vec<f64>,
}

impl ProblemSummary {
    fn of(problem: &AllocationProblem) -> Self {
        ProblemSummary {
            e_av: problem.e_av,
            bus_ids: problem.bus_ids(),
            capacities_kwh: problem.capacities(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusSummary {
    pub bus_id: String,
    pub sections: usize,
    /// Energy to drive the whole route electrically.
    pub required_kwh: f64,
    pub full_savings_g: f64,
}

/// Bits spent until a solver's allocation stays within the matching tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedBits {
    pub k: u64,
    pub broadcasts: u64,
    pub bits_per_broadcast_feedback: u64,
    pub bits_per_bus_feedback: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverResult {
    pub solver: SolverKind,
    pub problem: ProblemSummary,
    pub allocation: Vec<f64>,
    /// Recomputed from the utilities.
    pub savings_g: f64,
    pub iterations: u64,
    pub broadcasts: u64,
    pub bits: u64,
    pub comms: CommsBreakdown,
    /// Largest per-bus distance to the oracle, relative to `E_av / N`.
    pub oracle_gap: f64,
    /// `(oracle savings − savings) / oracle savings`.
    pub savings_gap: f64,
    pub kkt: KktResidual,
    pub converged: bool,
    pub matched: Option<MatchedBits>,
    pub warnings: Vec<String>,
    pub runtime_s: f64,
    pub over_budget: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub e_av: f64,
    pub savings_g: f64,
    pub allocation: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub e_av: f64,
    pub e_av_source: String,
    pub objective_mode: ObjectiveMode,
    pub seed: u64,
    pub match_tolerance: f64,
    pub buses: Vec<BusSummary>,
    /// Oracle savings, always computed.
    pub optimal_savings_g: f64,
    pub solvers: Vec<SolverResult>,
    pub comparison: Option<Comparison>,
    pub sweep: Vec<SweepPoint>,
    pub uncertainty: Option<UncertaintyReport>,
    pub output_dir: PathBuf,
    pub files: Vec<String>,
}

impl ScenarioReport {
    pub fn result(&self, kind: SolverKind) -> Option<&SolverResult> {
        self.solvers.iter().find(|r| r.solver == kind)
    }
}

/// Everything a run computes before touching the disk.
pub struct Outcome {
    pub report: ScenarioReport,
    pub routes: Vec<SectionedRoute>,
    pub problem: AllocationProblem,
    pub traces: Vec<SolverTrace>,
}

pub fn load_and_run(config_path: impl AsRef<Path>, opts: &RunOptions) -> Result<ScenarioReport> {
    let cfg = ScenarioConfig::load(config_path)?;
    run(cfg, opts)
}

/// Runs a scenario and writes its outputs.
pub fn run(cfg: ScenarioConfig, opts: &RunOptions) -> Result<ScenarioReport> {
    let outcome = compute(cfg, opts)?;
    write_outputs(outcome)
}

pub fn build_utilities(
    cfg: &ScenarioConfig,
) -> Result<(Vec<SectionedRoute>, Vec<UtilityFunction>)> {
    let routes = load_fleet(&cfg.fleet).map_err(|e| e.in_module("routes"))?;
    validate_fleet(&routes, None).map_err(|e| e.in_module("routes"))?;
    cfg.energy_model.validate().map_err(|e| e.in_module("models"))?;
    cfg.emission_model.validate().map_err(|e| e.in_module("models"))?;
    let sectioned: Vec<SectionedRoute> = routes.iter().map(discretize).collect();
    let utilities = sectioned
        .iter()
        .map(|r| {
            let values = section_values(r, &cfg.energy_model, &cfg.emission_model, cfg.objective_mode)?;
            build_utility(r.bus_id.clone(), values)
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_module("utility"))?;
    Ok((sectioned, utilities))
}

fn resolve_e_av(cfg: &ScenarioConfig) -> Result<(f64, String)> {
    if let Some(e) = cfg.e_av {
        return Ok((e, "config".into()));
    }
    let src = cfg.forecast.as_ref().expect("validated");
    let series = ForecastSeries::load_csv(&src.path, src.capacity_norm).map_err(|e| e.in_module("forecast"))?;
    let record = match &src.day {
        Some(day) => series.get(day).ok_or_else(|| {
            Error::Config(format!("day {day:?} not found in {}", src.path.display())).in_module("forecast")
        })?,
        None => series.records.last().expect("non-empty series"),
    };
    Ok((
        record.predicted_kwh,
        format!("forecast {} day {}", src.path.display(), record.day),
    ))
}

/// Runs the pipeline without writing anything.
pub fn compute(mut cfg: ScenarioConfig, opts: &RunOptions) -> Result<Outcome> {
    if let Some(out) = &opts.out {
        cfg.output_dir = out.clone();
    }
    if let Some(s) = opts.solver {
        cfg.solver = s;
    }
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    cfg.aimd.seed = cfg.seed;
    cfg.validate().map_err(|e| e.in_module("scenario"))?;

    let (routes, utilities) = build_utilities(&cfg)?;
    let (e_av, e_av_source) = resolve_e_av(&cfg)?;
    let problem = AllocationProblem::new(utilities, e_av).map_err(|e| e.in_module("baselines"))?;
    let oracle = central_solve(&problem);
    let settings = SolverSettings {
        aimd: cfg.aimd,
        admm: cfg.admm,
    };

    let mut results = Vec::new();
    let mut traces = Vec::new();
    for kind in cfg.solver.kinds() {
        let started = Instant::now();
        let trace = solve(kind, &problem, &settings)?;
        let runtime_s = started.elapsed().as_secs_f64();
        results.push(summarise(&cfg, &problem, &oracle.d, oracle.savings, &trace, runtime_s)?);
        traces.push(trace);
    }

    let sweep = cfg
        .sweep
        .iter()
        .map(|&e| {
            let p = AllocationProblem::new(problem.utilities.clone(), e)?;
            let a = central_solve(&p);
            Ok(SweepPoint {
                e_av: e,
                savings_g: p.savings(&a.d)?,
                allocation: a.d,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_module("baselines"))?;

    let uncertainty = cfg
        .uncertainty
        .map(|u| run_with_uncertainty(&problem, u.solver, &settings, &u.model, u.trials))
        .transpose()
        .map_err(|e| e.in_module("forecast"))?;

    let buses = routes
        .iter()
        .zip(&problem.utilities)
        .map(|(r, u)| BusSummary {
            bus_id: r.bus_id.clone(),
            sections: r.sections.len(),
            required_kwh: u.capacity(),
            full_savings_g: u.total_savings(),
        })
        .collect();

    let mut report = ScenarioReport {
        e_av,
        e_av_source,
        objective_mode: cfg.objective_mode,
        seed: cfg.seed,
        match_tolerance: cfg.match_tolerance,
        buses,
        optimal_savings_g: oracle.savings,
        solvers: results,
        comparison: None,
        sweep,
        uncertainty,
        output_dir: cfg.output_dir.clone(),
        files: Vec::new(),
    };
    if report.solvers.len() >= 2 {
        report.comparison = Some(compare(&report)?);
    }
    Ok(Outcome {
        report,
        routes,
        problem,
        traces,
    })
}

fn summarise(
    cfg: &ScenarioConfig,
    problem: &AllocationProblem,
    optimum: &[f64],
    optimal_savings: f64,
    trace: &SolverTrace,
    runtime_s: f64,
) -> Result<SolverResult> {
    let savings_g = problem.savings(&trace.final_allocation)?;
    let (bits, comms) = comms_bits(trace, &cfg.bits);
    let matched = if trace.solver == SolverKind::Oracle {
        Some(MatchedBits {
            k: 0,
            broadcasts: 0,
            bits_per_broadcast_feedback: 0,
            bits_per_bus_feedback: 0,
        })
    } else {
        let with = |feedback| BitAccounting { feedback, ..cfg.bits };
        let a = bits_to_accuracy(problem, trace, optimum, cfg.match_tolerance, &with(Feedback::PerBroadcast));
        let b = bits_to_accuracy(problem, trace, optimum, cfg.match_tolerance, &with(Feedback::PerBus));
        a.zip(b).map(|(a, b)| MatchedBits {
            k: a.k,
            broadcasts: a.broadcasts,
            bits_per_broadcast_feedback: a.bits,
            bits_per_bus_feedback: b.bits,
        })
    };
    let mut warnings = trace.warnings.clone();
    let over_budget = match cfg.time_budget_s.get(&trace.solver) {
        Some(&limit) if runtime_s > limit => {
            warnings.push(format!("{} took {runtime_s:.3} s, over its {limit} s budget", trace.solver));
            true
        }
        _ => false,
    };
    let savings_gap = if optimal_savings > 0.0 {
        (optimal_savings - savings_g) / optimal_savings
    } else {
        0.0
    };
    Ok(SolverResult {
        solver: trace.solver,
        problem: ProblemSummary::of(problem),
        savings_g,
        iterations: trace.iterations,
        broadcasts: trace.broadcasts,
        bits,
        comms,
        oracle_gap: trace.oracle_gap,
        savings_gap,
        kkt: kkt_residual(problem, &trace.final_allocation)?,
        converged: trace.converged,
        matched,
        warnings,
        runtime_s,
        over_budget,
        allocation: trace.final_allocation.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub solver: SolverKind,
    pub iterations: u64,
    pub bits: u64,
    pub oracle_gap_pct: f64,
    pub runtime_s: f64,
}

/// Bits each distributed solver needed to reach the matching tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitsOrdering {
    pub tolerance: f64,
    pub aimd: Option<MatchedBits>,
    pub admm: Option<MatchedBits>,
    /// AIMD used fewer bits than ADMM with one bit per congestion broadcast.
    pub holds_per_broadcast: bool,
    /// Same, charging AIMD one bit per bus per congestion event.
    pub holds_per_bus: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    /// Present when both AIMD and ADMM ran.
    pub ordering: Option<BitsOrdering>,
}

impl Comparison {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<8} {:>12} {:>12} {:>14} {:>11}",
            "solver", "iterations", "bits", "oracle gap %", "runtime s"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<8} {:>12} {:>12} {:>14.4} {:>11.3}",
                r.solver.name(),
                r.iterations,
                r.bits,
                r.oracle_gap_pct,
                r.runtime_s
            );
        }
        if let Some(o) = &self.ordering {
            let show = |m: Option<MatchedBits>, per_bus: bool| match m {
                Some(m) if per_bus => m.bits_per_bus_feedback.to_string(),
                Some(m) => m.bits_per_broadcast_feedback.to_string(),
                None => "never".into(),
            };
            let _ = writeln!(out, "bits to reach {}% oracle gap:", o.tolerance * 100.0);
            let _ = writeln!(
                out,
                "  per-broadcast feedback: aimd {} admm {} -> aimd < admm: {}",
                show(o.aimd, false),
                show(o.admm, false),
                o.holds_per_broadcast
            );
            let _ = writeln!(
                out,
                "  per-bus feedback:       aimd {} admm {} -> aimd < admm: {}",
                show(o.aimd, true),
                show(o.admm, true),
                o.holds_per_bus
            );
        }
        out
    }
}

/// Side-by-side table of the solvers in a report.
pub fn compare(report: &ScenarioReport) -> Result<Comparison> {
    if report.solvers.len() < 2 {
        return Err(Error::validation(
            "comparison",
            format!("needs at least two solvers, report has {}", report.solvers.len()),
        ));
    }
    let first = &report.solvers[0].problem;
    if let Some(other) = report.solvers.iter().find(|r| r.problem != *first) {
        return Err(Error::validation(
            "comparison",
            format!("{} solved a different problem than {}", other.solver, report.solvers[0].solver),
        ));
    }
    let rows = report
        .solvers
        .iter()
        .map(|r| ComparisonRow {
            solver: r.solver,
            iterations: r.iterations,
            bits: r.bits,
            oracle_gap_pct: r.oracle_gap * 100.0,
            runtime_s: r.runtime_s,
        })
        .collect();
    let ordering = match (report.result(SolverKind::Aimd), report.result(SolverKind::Admm)) {
        (Some(aimd), Some(admm)) => {
            let holds = |f: fn(&MatchedBits) -> u64| match (&aimd.matched, &admm.matched) {
                (Some(a), Some(b)) => f(a) < f(b),
                (Some(_), None) => true,
                _ => false,
            };
            Some(BitsOrdering {
                tolerance: report.match_tolerance,
                aimd: aimd.matched,
                admm: admm.matched,
                holds_per_broadcast: holds(|m| m.bits_per_broadcast_feedback),
                holds_per_bus: holds(|m| m.bits_per_bus_feedback),
            })
        }
        _ => None,
    };
    Ok(Comparison { rows, ordering })
}

fn write_file(dir: &Path, name: &str, bytes: &[u8], files: &mut Vec<String>) -> Result<()> {
    write_atomic(&dir.join(name), bytes)?;
    files.push(name.to_string());
    Ok(())
}

/// Writes the CSV outputs and `report.json` for a computed run.
pub fn write_outputs(outcome: Outcome) -> Result<ScenarioReport> {
    let Outcome {
        mut report,
        routes,
        problem,
        traces,
    } = outcome;
    let dir = report.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut files = Vec::new();

    let rows = report.solvers.iter().flat_map(|r| {
        problem.utilities.iter().zip(&r.allocation).map(move |(u, &d)| {
            let saved = u.eval(d).expect("feasible allocation");
            vec![
                r.solver.name().to_string(),
                u.bus_id.clone(),
                d.to_string(),
                u.capacity().to_string(),
                saved.to_string(),
            ]
        })
    });
    let bytes = csv_bytes(["solver", "bus_id", "allocated_kwh", "required_kwh", "savings_g"], rows)?;
    write_file(&dir, "allocation.csv", &bytes, &mut files)?;

    for t in traces.iter().filter(|t| t.solver != SolverKind::Oracle) {
        write_file(&dir, &format!("trace_{}.csv", t.solver), &t.to_csv()?, &mut files)?;
    }

    let rows = problem.utilities.iter().flat_map(|u| {
        u.breakpoints()
            .iter()
            .map(move |b| vec![u.bus_id.clone(), b.d.to_string(), b.f.to_string()])
    });
    write_file(&dir, "utilities.csv", &csv_bytes(["bus_id", "d_kwh", "savings_g"], rows)?, &mut files)?;

    // mode schedules follow the oracle when it ran, else the first solver
    if let Some(reference) = report
        .result(SolverKind::Oracle)
        .or_else(|| report.solvers.first())
    {
        for ((route, u), &budget) in routes.iter().zip(&problem.utilities).zip(&reference.allocation) {
            let schedule = u.schedule_modes(budget).map_err(|e| e.in_module("utility"))?;
            let rows = route.sections.iter().zip(u.sections()).enumerate().map(|(l, (sec, val))| {
                vec![
                    l.to_string(),
                    sec.segment.to_string(),
                    sec.length_km.to_string(),
                    sec.speed_kmh.to_string(),
                    val.energy_cost.to_string(),
                    val.emission_value.to_string(),
                    schedule.gamma[l].to_string(),
                    schedule.mode(l).as_str().to_string(),
                ]
            });
            let bytes = csv_bytes(
                [
                    "section",
                    "segment",
                    "length_km",
                    "speed_kmh",
                    "energy_kwh",
                    "savings_g",
                    "ev_fraction",
                    "mode",
                ],
                rows,
            )?;
            write_file(&dir, &format!("schedule_{}.csv", u.bus_id), &bytes, &mut files)?;
        }
    }

    files.push("report.json".into());
    report.files = files;
    let json = serde_json::to_vec_pretty(&report)
        .map_err(|e| Error::Config(format!("serialising report: {e}")))?;
    write_atomic(&dir.join("report.json"), &json)?;
    Ok(report)
}

/// Markdown reference for the scenario file, generated from the defaults.
pub fn config_reference() -> String {
    fn json<T: Serialize>(v: &T) -> String {
        serde_json::to_string_pretty(v).expect("plain data serialises")
    }
    let mut out = String::new();
    let _ = writeln!(out, "# Scenario configuration reference\n");
    let _ = writeln!(
        out,
        "Generated by `ecoalloc defaults`. A scenario is one JSON object. Relative paths are \
         resolved against the directory of the scenario file. Unknown keys are rejected.\n"
    );
    let _ = writeln!(out, "| key | type | default | meaning |");
    let _ = writeln!(out, "|---|---|---|---|");
    let rows: [(&str, &str, &str, &str); 16] = [
        ("fleet", "path", "required", "fleet JSON (`{\"fleet\": [{\"bus_id\", \"segments\": [{\"length_km\", \"speed_kmh\"}]}]}`)"),
        ("energy_model", "object", "see below", "`alpha0`, `alpha1`, `alpha2` (numbers, decimal strings, \"p/q\" or [p, q]) and `valid_range`"),
        ("emission_model", "object", "required", "`a`..`g`, `k`, `valid_range`; rate is k·(a + b·s + … + g·s⁶)/s g/km"),
        ("objective_mode", "string", "`per_km_rate`", "`per_km_rate` (grams over the section) or `unweighted` (rate only)"),
        ("e_av", "number", "none", "available energy, kWh; exactly one of `e_av` and `forecast`"),
        ("forecast", "object", "none", "`path` to a `day,predicted_kwh,actual_kwh` CSV, optional `day` (default: last) and `capacity_norm`"),
        ("solver", "string", "`all`", "`aimd`, `admm`, `oracle` or `all`"),
        ("aimd", "object", "see below", "AIMD parameters; `gamma_gain: null` means 0.5·min slope·E_av/N"),
        ("admm", "object", "see below", "ADMM parameters"),
        ("bits", "object", "see below", "bit accounting; `feedback` is `per_broadcast` or `per_bus`"),
        ("output_dir", "path", "`out`", "where outputs go; `--out` overrides"),
        ("seed", "integer", "0", "AIMD seed, replaces `aimd.seed`; `--seed` overrides"),
        ("sweep", "array", "[]", "extra E_av values solved by the oracle"),
        ("uncertainty", "object", "none", "`model` (`kind`, `distribution`, `seed`), `trials` (1000), `solver` (`oracle`)"),
        ("time_budget_s", "object", "{}", "per-solver wall-clock budget, e.g. `{\"aimd\": 600}`; overruns are flagged, not stopped"),
        ("match_tolerance", "number", "0.02", "per-bus oracle gap (relative to E_av/N) at which bits are compared"),
    ];
    for (k, t, d, m) in rows {
        let _ = writeln!(out, "| `{k}` | {t} | {d} | {m} |");
    }
    let _ = writeln!(out, "\n## Defaults\n");
    let blocks = [
        ("energy_model", json(&EnergyModel::default())),
        ("aimd", json(&AimdConfig::default())),
        ("admm", json(&AdmmConfig::default())),
        ("bits", json(&BitAccounting::default())),
    ];
    for (name, block) in blocks {
        let _ = writeln!(out, "`{name}`:\n\n```json\n{block}\n```\n");
    }
    let _ = writeln!(out, "Uncertainty model example:\n");
    let example = UncertaintyModel {
        kind: crate::forecast::ErrorKind::Multiplicative,
        distribution: crate::forecast::ErrorDistribution::Normal { mu: 0.0, sigma: 0.05 },
        seed: 0,
    };
    let _ = writeln!(out, "```json\n{}\n```", json(&example));
    out
}
