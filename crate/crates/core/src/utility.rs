//! CO₂-savings utilities.
//!
//! For a bus with sections `l`, each section costs `e(s_l)·L_l` kWh to drive
//! electrically and saves `H_l` grams of CO₂ when it is. The best savings for
//! an energy budget `d` is a fractional knapsack over the EV fractions
//! `γ_l ∈ [0, 1]`, which the greedy fill by descending grams-per-kWh solves
//! exactly. The result is a concave, piecewise-linear `f(d)` whose pieces are
//! the sections in fill order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{EmissionModel, EnergyModel};
use crate::routes::SectionedRoute;

/// How a section's emission value is derived from the per-km rate `h(s)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMode {
    /// `H = h(s)·L`: grams emitted over the section.
    #[default]
    PerKmRate,
    /// `H = h(s)`: the rate itself, unweighted by section length.
    Unweighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectionValue {
    pub section: usize,
    /// kWh to drive the whole section in EV mode.
    pub energy_cost: f64,
    /// grams of CO₂ avoided by doing so.
    pub emission_value: f64,
    /// grams per kWh.
    pub ratio: f64,
}

/// Costs and values of every section of a route.
pub fn section_values(
    route: &SectionedRoute,
    energy: &EnergyModel,
    emission: &EmissionModel,
    mode: ObjectiveMode,
) -> Result<Vec<SectionValue>> {
    route
        .sections
        .iter()
        .enumerate()
        .map(|(l, sec)| {
            let at = |e: Error| {
                Error::validation(
                    format!("bus {:?} section {l}", route.bus_id),
                    e.to_string(),
                )
            };
            let e = energy.energy_per_km(sec.speed_kmh).map_err(at)?;
            let h = emission.emission_rate(sec.speed_kmh).map_err(at)?;
            let energy_cost = e * sec.length_km;
            let emission_value = match mode {
                ObjectiveMode::PerKmRate => h * sec.length_km,
                ObjectiveMode::Unweighted => h,
            };
            Ok(SectionValue {
                section: l,
                energy_cost,
                emission_value,
                ratio: emission_value / energy_cost,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Breakpoint {
    /// kWh
    pub d: f64,
    /// grams
    pub f: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Budgets this far past capacity are treated as capacity (rounding in sums).
const CAPACITY_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct UtilityFunction {
    pub bus_id: String,
    sections: Vec<SectionValue>,
    fill_order: Vec<usize>,
    breakpoints: Vec<Breakpoint>,
}

/// One linear piece of a utility: sections are filled one piece at a time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Piece {
    pub start: f64,
    pub width: f64,
    pub slope: f64,
}

/// Greedy fractional-knapsack construction of `f`.
///
/// Sections are sorted by descending ratio (stable on section index) and
/// their costs and values accumulated into the breakpoints.
pub fn build_utility(bus_id: impl Into<String>, values: Vec<SectionValue>) -> Result<UtilityFunction> {
    let bus_id = bus_id.into();
    if values.is_empty() {
        return Err(Error::validation(
            format!("utility for bus {bus_id:?}"),
            "route has no sections",
        ));
    }
    for v in &values {
        if !(v.energy_cost > 0.0 && v.emission_value >= 0.0 && v.ratio.is_finite()) {
            return Err(Error::validation(
                format!("utility for bus {bus_id:?}"),
                format!(
                    "section {}: need energy_cost > 0 and emission_value >= 0",
                    v.section
                ),
            ));
        }
    }
    let mut fill_order: Vec<usize> = (0..values.len()).collect();
    // sort_by is stable, so equal ratios stay in section order
    fill_order.sort_by(|&a, &b| values[b].ratio.total_cmp(&values[a].ratio));

    let mut breakpoints = Vec::with_capacity(values.len() + 1);
    let (mut d, mut f) = (0.0, 0.0);
    breakpoints.push(Breakpoint { d, f });
    for &i in &fill_order {
        d += values[i].energy_cost;
        f += values[i].emission_value;
        breakpoints.push(Breakpoint { d, f });
    }
    Ok(UtilityFunction {
        bus_id,
        sections: values,
        fill_order,
        breakpoints,
    })
}

impl UtilityFunction {
    pub fn sections(&self) -> &[SectionValue] {
        &self.sections
    }

    /// Section indices by descending grams per kWh.
    pub fn fill_order(&self) -> &[usize] {
        &self.fill_order
    }

    pub fn breakpoints(&self) -> &[Breakpoint] {
        &self.breakpoints
    }

    /// Energy to drive the whole route in EV mode, kWh.
    pub fn capacity(&self) -> f64 {
        self.breakpoints.last().map_or(0.0, |b| b.d)
    }

    /// Savings when the whole route is driven in EV mode, grams.
    pub fn total_savings(&self) -> f64 {
        self.breakpoints.last().map_or(0.0, |b| b.f)
    }

    pub fn piece_count(&self) -> usize {
        self.fill_order.len()
    }

    pub fn piece(&self, j: usize) -> Piece {
        let sec = &self.sections[self.fill_order[j]];
        Piece {
            start: self.breakpoints[j].d,
            width: sec.energy_cost,
            slope: sec.ratio,
        }
    }

    pub fn pieces(&self) -> impl Iterator<Item = Piece> + '_ {
        (0..self.piece_count()).map(|j| self.piece(j))
    }

    /// Steepest slope, at `d = 0`.
    pub fn max_slope(&self) -> f64 {
        self.piece(0).slope
    }

    /// Slope of the last piece before capacity.
    pub fn min_slope(&self) -> f64 {
        self.piece(self.piece_count() - 1).slope
    }

    fn check_budget(&self, d: f64) -> Result<f64> {
        let cap = self.capacity();
        if d.is_nan() || d < 0.0 || d > cap + CAPACITY_SLACK {
            return Err(Error::domain(
                format!("budget for bus {:?}", self.bus_id),
                d,
                0.0,
                cap,
            ));
        }
        Ok(d.min(cap))
    }

    /// Index of the piece containing `d` on its right side; `piece_count()` at capacity.
    fn right_piece(&self, d: f64) -> usize {
        self.breakpoints.partition_point(|b| b.d <= d) - 1
    }

    /// Best savings for budget `d` kWh, in grams.
    pub fn eval(&self, d: f64) -> Result<f64> {
        let d = self.check_budget(d)?;
        let j = self.right_piece(d);
        if j >= self.piece_count() {
            return Ok(self.total_savings());
        }
        let p = self.piece(j);
        Ok(self.breakpoints[j].f + p.slope * (d - p.start))
    }

    /// One-sided slope of `f` at `d`, in grams per kWh.
    ///
    /// The right derivative at capacity is 0; the left derivative at 0 is the
    /// first slope.
    pub fn derivative(&self, d: f64, side: Side) -> Result<f64> {
        let d = self.check_budget(d)?;
        let j = match side {
            Side::Right => self.right_piece(d),
            Side::Left => self
                .breakpoints
                .partition_point(|b| b.d < d)
                .saturating_sub(1),
        };
        if j >= self.piece_count() {
            return Ok(0.0);
        }
        Ok(self.piece(j).slope)
    }

    /// EV fractions per section that realise `eval(budget)`.
    pub fn schedule_modes(&self, budget: f64) -> Result<ModeSchedule> {
        let budget = self.check_budget(budget)?;
        let mut gamma = vec![0.0; self.sections.len()];
        let j = self.right_piece(budget);
        for &i in &self.fill_order[..j.min(self.piece_count())] {
            gamma[i] = 1.0;
        }
        if j < self.piece_count() {
            let p = self.piece(j);
            let frac = ((budget - p.start) / p.width).clamp(0.0, 1.0);
            gamma[self.fill_order[j]] = frac;
        }
        Ok(ModeSchedule { gamma })
    }

    /// Energy spent and savings achieved by a schedule, summed over sections.
    pub fn schedule_totals(&self, schedule: &ModeSchedule) -> (f64, f64) {
        self.sections
            .iter()
            .zip(&schedule.gamma)
            .fold((0.0, 0.0), |(e, h), (s, g)| {
                (e + s.energy_cost * g, h + s.emission_value * g)
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DriveMode {
    #[serde(rename = "EV")]
    Ev,
    #[serde(rename = "ICE")]
    Ice,
    #[serde(rename = "SPLIT")]
    Split,
}

impl DriveMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DriveMode::Ev => "EV",
            DriveMode::Ice => "ICE",
            DriveMode::Split => "SPLIT",
        }
    }
}

/// Per-section EV fraction `γ`, indexed like the route's sections.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSchedule {
    pub gamma: Vec<f64>,
}

impl ModeSchedule {
    pub fn mode(&self, section: usize) -> DriveMode {
        match self.gamma[section] {
            g if g >= 1.0 => DriveMode::Ev,
            g if g <= 0.0 => DriveMode::Ice,
            _ => DriveMode::Split,
        }
    }

    pub fn fractional_count(&self) -> usize {
        self.gamma.iter().filter(|&&g| g > 0.0 && g < 1.0).count()
    }
}
