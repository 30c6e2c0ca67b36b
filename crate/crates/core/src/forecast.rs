//! Day-ahead forecasts of renewable energy: error statistics, and allocation
//! runs where the delivered energy differs from the forecast.
//!
//! The per-record error is the normalised absolute error
//!
//! ```text
//!   NMAE = |predicted − actual| · 100 / capacity_norm   (%)
//! ```

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::baselines::AllocationProblem;
use crate::error::{Error, Result};
use crate::io::csv_bytes;
use crate::solver::{solve, SolverSettings};
use crate::trace::SolverKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub day: String,
    pub predicted_kwh: f64,
    pub actual_kwh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSeries {
    pub records: Vec<ForecastRecord>,
    /// Normalisation base for NMAE, kWh.
    pub capacity_norm: f64,
}

impl ForecastSeries {
    /// Builds a series. Without an explicit `capacity_norm` the largest
    /// observed value (predicted or actual) is used.
    pub fn new(records: Vec<ForecastRecord>, capacity_norm: Option<f64>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::validation("forecast series", "no records"));
        }
        for r in &records {
            let ok = |x: f64| x.is_finite() && x >= 0.0;
            if !ok(r.predicted_kwh) || !ok(r.actual_kwh) {
                return Err(Error::validation(
                    "forecast series",
                    format!("day {:?}: energies must be finite and >= 0", r.day),
                ));
            }
        }
        let norm = capacity_norm.unwrap_or_else(|| {
            records
                .iter()
                .map(|r| r.predicted_kwh.max(r.actual_kwh))
                .fold(0.0, f64::max)
        });
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::Config(format!("capacity_norm must be > 0, got {norm}")));
        }
        Ok(ForecastSeries {
            records,
            capacity_norm: norm,
        })
    }

    /// Reads `day,predicted_kwh,actual_kwh`.
    pub fn parse_csv(text: &str, origin: &str, capacity_norm: Option<f64>) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let mut records = Vec::new();
        for row in reader.deserialize() {
            let record: ForecastRecord = row.map_err(|e| Error::Parse {
                context: origin.to_string(),
                message: e.to_string(),
            })?;
            records.push(record);
        }
        Self::new(records, capacity_norm)
    }

    pub fn load_csv(path: impl AsRef<Path>, capacity_norm: Option<f64>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, &path.display().to_string(), capacity_norm)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        csv_bytes(
            ["day", "predicted_kwh", "actual_kwh"],
            self.records.iter().map(|r| {
                vec![r.day.clone(), r.predicted_kwh.to_string(), r.actual_kwh.to_string()]
            }),
        )
    }

    pub fn get(&self, day: &str) -> Option<&ForecastRecord> {
        self.records.iter().find(|r| r.day == day)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmaeOptions {
    /// Histogram bin width in percentage points.
    pub bin_width: f64,
    /// Threshold (%) for the reported fraction of records at or below it.
    pub threshold: f64,
}

impl Default for NmaeOptions {
    fn default() -> Self {
        NmaeOptions {
            bin_width: 1.0,
            threshold: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    /// Left edges of the bins, `[edge, edge + bin_width)`.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmaeReport {
    pub capacity_norm: f64,
    pub per_record: Vec<f64>,
    pub mean: f64,
    pub max: f64,
    pub threshold: f64,
    pub fraction_within: f64,
    pub histogram: Histogram,
}

impl NmaeReport {
    /// Fraction of records with NMAE at or below `threshold` percent.
    pub fn fraction_at_most(&self, threshold: f64) -> f64 {
        let hits = self.per_record.iter().filter(|&&e| e <= threshold).count();
        hits as f64 / self.per_record.len() as f64
    }
}

pub fn nmae(series: &ForecastSeries, opts: &NmaeOptions) -> Result<NmaeReport> {
    if series.records.is_empty() {
        return Err(Error::validation("forecast series", "no records"));
    }
    if !(series.capacity_norm > 0.0) {
        return Err(Error::Config(format!(
            "capacity_norm must be > 0, got {}",
            series.capacity_norm
        )));
    }
    if !(opts.bin_width > 0.0 && opts.bin_width.is_finite()) {
        return Err(Error::Config(format!("bin_width must be > 0, got {}", opts.bin_width)));
    }
    let per_record: Vec<f64> = series
        .records
        .iter()
        .map(|r| (r.predicted_kwh - r.actual_kwh).abs() * 100.0 / series.capacity_norm)
        .collect();
    let max = per_record.iter().copied().fold(0.0, f64::max);
    let mean = per_record.iter().sum::<f64>() / per_record.len() as f64;

    let bins = (max / opts.bin_width).floor() as usize + 1;
    let mut counts = vec![0u64; bins];
    for &e in &per_record {
        counts[((e / opts.bin_width).floor() as usize).min(bins - 1)] += 1;
    }
    let histogram = Histogram {
        bin_width: opts.bin_width,
        edges: (0..bins).map(|b| b as f64 * opts.bin_width).collect(),
        counts,
    };
    let mut report = NmaeReport {
        capacity_norm: series.capacity_norm,
        per_record,
        mean,
        max,
        threshold: opts.threshold,
        fraction_within: 0.0,
        histogram,
    };
    report.fraction_within = report.fraction_at_most(opts.threshold);
    Ok(report)
}

/// A synthetic series of `days` records with capacity base 100 kWh in which
/// `within` of the errors are at most 2.9 % and the rest lie in (3 %, 7 %],
/// the largest being exactly 7 %. Shuffled with `seed`.
pub fn synthetic_series(days: usize, within: usize, seed: u64) -> ForecastSeries {
    assert!(within <= days && days > within, "need at least one record above 3 %");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // errors in hundredths of a kWh, well clear of the 3 % boundary
    let mut errors: Vec<i64> = Vec::with_capacity(days);
    errors.extend((0..within).map(|_| rng.random_range(0..=290)));
    errors.push(700);
    errors.extend((within + 1..days).map(|_| rng.random_range(310..700)));
    errors.shuffle(&mut rng);
    let records = errors
        .into_iter()
        .enumerate()
        .map(|(i, err)| {
            let mut actual: i64 = rng.random_range(2000..9000);
            if err == 700 {
                // whole kWh, so the largest error is exactly 7
                actual -= actual % 100;
            }
            let sign = if rng.random_bool(0.5) { 1 } else { -1 };
            ForecastRecord {
                day: format!("d{:03}", i + 1),
                predicted_kwh: (actual + sign * err) as f64 / 100.0,
                actual_kwh: actual as f64 / 100.0,
            }
        })
        .collect();
    ForecastSeries {
        records,
        capacity_norm: 100.0,
    }
}

/// `days` records whose prediction is the actual value times `1 + u`,
/// `u ~ U(−rel, rel)`. Capacity base is the largest actual value.
pub fn uniform_error_series(days: usize, rel: f64, seed: u64) -> Result<ForecastSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..days)
        .map(|i| {
            let actual = rng.random_range(20.0..90.0);
            let u: f64 = rng.random_range(-rel..=rel);
            ForecastRecord {
                day: format!("d{:03}", i + 1),
                predicted_kwh: actual * (1.0 + u),
                actual_kwh: actual,
            }
        })
        .collect::<Vec<_>>();
    let norm = records.iter().map(|r| r.actual_kwh).fold(0.0, f64::max);
    ForecastSeries::new(records, Some(norm))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    /// `actual = predicted · (1 + x)`
    Multiplicative,
    /// `actual = predicted + x`
    Additive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ErrorDistribution {
    Uniform { lo: f64, hi: f64 },
    Normal { mu: f64, sigma: f64 },
}

/// Forecast error model. Draws that would make the delivered energy negative
/// are rejected and redrawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintyModel {
    pub kind: ErrorKind,
    pub distribution: ErrorDistribution,
    #[serde(default)]
    pub seed: u64,
}

const MAX_REJECTIONS: usize = 10_000;

impl UncertaintyModel {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::validation("uncertainty model", m));
        match self.distribution {
            ErrorDistribution::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return bad(format!("uniform bounds must satisfy lo <= hi, got [{lo}, {hi}]"));
                }
                let floor = match self.kind {
                    ErrorKind::Multiplicative => -1.0,
                    ErrorKind::Additive => f64::NEG_INFINITY,
                };
                if hi < floor {
                    return bad(format!("uniform({lo}, {hi}) never yields a non-negative energy"));
                }
            }
            ErrorDistribution::Normal { mu, sigma } => {
                if !(mu.is_finite() && sigma.is_finite() && sigma >= 0.0) {
                    return bad(format!("normal needs finite mu and sigma >= 0, got ({mu}, {sigma})"));
                }
                if sigma == 0.0 && self.kind == ErrorKind::Multiplicative && mu < -1.0 {
                    return bad(format!("normal({mu}, 0) always yields a negative energy"));
                }
            }
        }
        Ok(())
    }

    fn draw_error(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self.distribution {
            ErrorDistribution::Uniform { lo, hi } if lo == hi => lo,
            ErrorDistribution::Uniform { lo, hi } => rng.random_range(lo..hi),
            ErrorDistribution::Normal { mu, sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                mu + sigma * z
            }
        }
    }

    /// Delivered energy for one trial.
    pub fn draw_actual(&self, predicted: f64, rng: &mut ChaCha8Rng) -> Result<f64> {
        for _ in 0..MAX_REJECTIONS {
            let x = self.draw_error(rng);
            let actual = match self.kind {
                ErrorKind::Multiplicative => predicted * (1.0 + x),
                ErrorKind::Additive => predicted + x,
            };
            if actual >= 0.0 {
                return Ok(actual);
            }
        }
        Err(Error::validation(
            "uncertainty model",
            format!("no non-negative draw in {MAX_REJECTIONS} attempts"),
        ))
    }

    /// The random stream used for `trial`.
    pub fn trial_rng(&self, trial: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(trial);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub actual_kwh: f64,
    /// Allocated energy that has to be bought from the grid.
    pub shortfall_kwh: f64,
    /// Renewable energy left unused.
    pub surplus_kwh: f64,
    /// Allocated energy covered by renewables.
    pub renewable_used_kwh: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub p05: f64,
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
}

impl Summary {
    fn of(values: &[f64]) -> Summary {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| v[((v.len() - 1) as f64 * p).round() as usize];
        Summary {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: v[0],
            p05: q(0.05),
            p50: q(0.5),
            p95: q(0.95),
            max: v[v.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub solver: SolverKind,
    pub predicted_kwh: f64,
    /// `Σ d_i` of the allocation made against the forecast.
    pub allocated_kwh: f64,
    pub allocation: Vec<f64>,
    pub model: UncertaintyModel,
    pub trials: Vec<Trial>,
    pub shortfall: Summary,
    pub surplus: Summary,
}

/// Allocates `problem.e_av` (the forecast) once with `solver`, then draws the
/// delivered energy `trials` times. Trial `t` uses stream `t` of the model seed.
pub fn run_with_uncertainty(
    problem: &AllocationProblem,
    solver: SolverKind,
    settings: &SolverSettings,
    model: &UncertaintyModel,
    trials: u64,
) -> Result<UncertaintyReport> {
    model.validate()?;
    if trials == 0 {
        return Err(Error::validation("uncertainty run", "trials must be >= 1"));
    }
    let trace = solve(solver, problem, settings)?;
    let allocated: f64 = trace.final_allocation.iter().sum();
    let mut out = Vec::with_capacity(trials as usize);
    for t in 0..trials {
        let mut rng = model.trial_rng(t);
        let actual = model.draw_actual(problem.e_av, &mut rng)?;
        let used = allocated.min(actual);
        out.push(Trial {
            actual_kwh: actual,
            shortfall_kwh: allocated - used,
            surplus_kwh: actual - used,
            renewable_used_kwh: used,
        });
    }
    let shortfalls: Vec<f64> = out.iter().map(|t| t.shortfall_kwh).collect();
    let surpluses: Vec<f64> = out.iter().map(|t| t.surplus_kwh).collect();
    Ok(UncertaintyReport {
        solver,
        predicted_kwh: problem.e_av,
        allocated_kwh: allocated,
        allocation: trace.final_allocation,
        model: *model,
        shortfall: Summary::of(&shortfalls),
        surplus: Summary::of(&surpluses),
        trials: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::utility::{build_utility, SectionValue};

    fn rec(p: f64, a: f64) -> ForecastRecord {
        ForecastRecord {
            day: "x".into(),
            predicted_kwh: p,
            actual_kwh: a,
        }
    }

    #[test]
    fn perfect_forecast() {
        let s = ForecastSeries::new(vec![rec(5.0, 5.0), rec(7.0, 7.0)], Some(10.0)).unwrap();
        let r = nmae(&s, &NmaeOptions::default()).unwrap();
        assert_eq!(r.per_record, vec![0.0, 0.0]);
        assert_eq!(r.fraction_within, 1.0);
    }

    #[test]
    fn single_record() {
        let s = ForecastSeries::new(vec![rec(103.0, 100.0)], Some(100.0)).unwrap();
        let r = nmae(&s, &NmaeOptions::default()).unwrap();
        assert_eq!(r.per_record, vec![3.0]);
        assert_eq!(r.histogram.counts, vec![0, 0, 0, 1]);
    }

    #[test]
    fn bad_norm_is_config_error() {
        let err = ForecastSeries::new(vec![rec(1.0, 1.0)], Some(0.0)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let mut s = ForecastSeries::new(vec![rec(1.0, 1.0)], None).unwrap();
        s.capacity_norm = -1.0;
        assert!(matches!(nmae(&s, &NmaeOptions::default()), Err(Error::Config(_))));
    }

    #[test]
    fn default_norm_is_largest_value() {
        let s = ForecastSeries::new(vec![rec(4.0, 9.0), rec(12.0, 3.0)], None).unwrap();
        assert_eq!(s.capacity_norm, 12.0);
    }

    #[test]
    fn csv_roundtrip() {
        let s = synthetic_series(10, 8, 3);
        let bytes = s.to_csv().unwrap();
        let back = ForecastSeries::parse_csv(std::str::from_utf8(&bytes).unwrap(), "mem", Some(100.0)).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn csv_errors_name_origin() {
        let err = ForecastSeries::parse_csv("day,predicted_kwh,actual_kwh\nd1,abc,3\n", "f.csv", None).unwrap_err();
        assert!(err.to_string().contains("f.csv"), "{err}");
    }

    fn problem(e_av: f64) -> AllocationProblem {
        let u = |id: &str, slope: f64| {
            build_utility(
                id,
                vec![SectionValue {
                    section: 0,
                    energy_cost: 100.0,
                    emission_value: 100.0 * slope,
                    ratio: slope,
                }],
            )
            .unwrap()
        };
        AllocationProblem::new(vec![u("a", 2.0), u("b", 1.0)], e_av).unwrap()
    }

    #[test]
    fn zero_error_model() {
        let m = UncertaintyModel {
            kind: ErrorKind::Multiplicative,
            distribution: ErrorDistribution::Uniform { lo: 0.0, hi: 0.0 },
            seed: 1,
        };
        let r = run_with_uncertainty(&problem(50.0), SolverKind::Oracle, &SolverSettings::default(), &m, 20).unwrap();
        assert!(r.trials.iter().all(|t| t.shortfall_kwh == 0.0 && t.surplus_kwh == 0.0));
    }

    #[test]
    fn ten_percent_short() {
        let m = UncertaintyModel {
            kind: ErrorKind::Multiplicative,
            distribution: ErrorDistribution::Uniform { lo: -0.1, hi: -0.1 },
            seed: 0,
        };
        let r = run_with_uncertainty(&problem(50.0), SolverKind::Oracle, &SolverSettings::default(), &m, 5).unwrap();
        for t in &r.trials {
            assert!((t.shortfall_kwh - 5.0).abs() < 1e-12);
            assert!((t.shortfall_kwh + t.renewable_used_kwh - r.allocated_kwh).abs() < 1e-12);
        }
    }

    #[test]
    fn truncation_keeps_actual_non_negative() {
        let m = UncertaintyModel {
            kind: ErrorKind::Additive,
            distribution: ErrorDistribution::Normal { mu: -10.0, sigma: 20.0 },
            seed: 4,
        };
        let r = run_with_uncertainty(&problem(5.0), SolverKind::Oracle, &SolverSettings::default(), &m, 500).unwrap();
        assert!(r.trials.iter().all(|t| t.actual_kwh >= 0.0));
    }

    #[test]
    fn impossible_model_rejected() {
        let m = UncertaintyModel {
            kind: ErrorKind::Multiplicative,
            distribution: ErrorDistribution::Uniform { lo: -3.0, hi: -2.0 },
            seed: 0,
        };
        assert!(m.validate().is_err());
    }
}
