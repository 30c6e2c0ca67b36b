//! Speed-dependent vehicle models.
//!
//! Two per-kilometre rates drive everything downstream:
//!
//! * [`EnergyModel`]: electrical energy `e(s) = α₀s² + α₁s + α₂` in kWh/km.
//! * [`EmissionModel`]: average-speed CO₂ rate
//!   `h(s) = k·(a + b·s + c·s² + d·s³ + e·s⁴ + f·s⁵ + g·s⁶)/s` in g/km.
//!
//! Speeds are km/h throughout. Both models carry a validity range and refuse
//! to extrapolate outside it.

use std::fmt;
use std::str::FromStr;

use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed speed interval `[lo, hi]` in km/h.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[Coef; 2]", into = "[f64; 2]")]
pub struct SpeedRange {
    pub lo: f64,
    pub hi: f64,
}

impl SpeedRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo < hi) {
            return Err(Error::validation(
                "speed range",
                format!("expected 0 < lo < hi, got [{lo}, {hi}]"),
            ));
        }
        Ok(SpeedRange { lo, hi })
    }

    pub fn contains(&self, s: f64) -> bool {
        s >= self.lo && s <= self.hi
    }

    fn check(&self, what: &str, s: f64) -> Result<()> {
        if self.contains(s) {
            Ok(())
        } else {
            Err(Error::domain(what, s, self.lo, self.hi))
        }
    }
}

impl Default for SpeedRange {
    fn default() -> Self {
        SpeedRange { lo: 5.0, hi: 100.0 }
    }
}

impl TryFrom<[Coef; 2]> for SpeedRange {
    type Error = Error;

    fn try_from(v: [Coef; 2]) -> Result<Self> {
        SpeedRange::new(v[0].0, v[1].0)
    }
}

impl From<SpeedRange> for [f64; 2] {
    fn from(r: SpeedRange) -> Self {
        [r.lo, r.hi]
    }
}

/// Quadratic electrical energy consumption per kilometre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    /// kWh/km per (km/h)²
    #[serde(deserialize_with = "coef")]
    pub alpha0: f64,
    /// kWh/km per km/h
    #[serde(deserialize_with = "coef")]
    pub alpha1: f64,
    /// kWh/km
    #[serde(deserialize_with = "coef")]
    pub alpha2: f64,
    #[serde(default)]
    pub valid_range: SpeedRange,
}

impl Default for EnergyModel {
    /// Least-squares fit to measured consumption of a battery-electric bus.
    fn default() -> Self {
        EnergyModel {
            alpha0: 22.0 / 28777.0,
            alpha1: -213.0 / 2599.0,
            alpha2: 2384.0 / 783.0,
            valid_range: SpeedRange::default(),
        }
    }
}

impl EnergyModel {
    /// Energy per kilometre at speed `s`, in kWh/km.
    pub fn energy_per_km(&self, s: f64) -> Result<f64> {
        self.valid_range.check("speed (energy model)", s)?;
        Ok(self.eval_unchecked(s))
    }

    fn eval_unchecked(&self, s: f64) -> f64 {
        (self.alpha0 * s + self.alpha1) * s + self.alpha2
    }

    /// Speed minimising `e(s)` over the real line, if the model is strictly convex.
    pub fn vertex(&self) -> Option<f64> {
        (self.alpha0 > 0.0).then(|| -self.alpha1 / (2.0 * self.alpha0))
    }

    /// Checks convexity and strict positivity over the validity range.
    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.alpha0, self.alpha1, self.alpha2]
            .iter()
            .all(|c| c.is_finite());
        if !all_finite || self.alpha0 < 0.0 {
            return Err(Error::validation(
                "energy model",
                "coefficients must be finite with alpha0 >= 0",
            ));
        }
        let r = self.valid_range;
        let mut lowest = self.eval_unchecked(r.lo).min(self.eval_unchecked(r.hi));
        if let Some(v) = self.vertex().filter(|v| r.contains(*v)) {
            lowest = lowest.min(self.eval_unchecked(v));
        }
        if lowest <= 0.0 {
            return Err(Error::validation(
                "energy model",
                format!(
                    "e(s) must be positive on [{}, {}], minimum is {lowest}",
                    r.lo, r.hi
                ),
            ));
        }
        Ok(())
    }
}

/// Average-speed CO₂ emission model.
///
/// There are no built-in coefficients: the table for a given vehicle class
/// has to come from configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmissionModel {
    #[serde(deserialize_with = "coef")]
    pub a: f64,
    #[serde(deserialize_with = "coef")]
    pub b: f64,
    #[serde(deserialize_with = "coef")]
    pub c: f64,
    #[serde(deserialize_with = "coef")]
    pub d: f64,
    #[serde(deserialize_with = "coef")]
    pub e: f64,
    #[serde(deserialize_with = "coef")]
    pub f: f64,
    #[serde(deserialize_with = "coef")]
    pub g: f64,
    #[serde(deserialize_with = "coef")]
    pub k: f64,
    #[serde(default)]
    pub valid_range: SpeedRange,
}

/// Number of samples used when checking positivity of the emission polynomial.
const POSITIVITY_SAMPLES: usize = 10_000;

impl EmissionModel {
    /// Builds a model from the seven polynomial coefficients `a..g` and scale `k`.
    pub fn from_coefficients(poly: [f64; 7], k: f64, valid_range: SpeedRange) -> Self {
        let [a, b, c, d, e, f, g] = poly;
        EmissionModel {
            a,
            b,
            c,
            d,
            e,
            f,
            g,
            k,
            valid_range,
        }
    }

    pub fn coefficients(&self) -> [f64; 7] {
        [self.a, self.b, self.c, self.d, self.e, self.f, self.g]
    }

    /// Emission rate at speed `s`, in g/km.
    pub fn emission_rate(&self, s: f64) -> Result<f64> {
        if s <= 0.0 {
            return Err(Error::domain(
                "speed (emission model)",
                s,
                self.valid_range.lo,
                self.valid_range.hi,
            ));
        }
        self.valid_range.check("speed (emission model)", s)?;
        Ok(self.eval_unchecked(s))
    }

    fn eval_unchecked(&self, s: f64) -> f64 {
        let poly = self
            .coefficients()
            .iter()
            .rev()
            .fold(0.0, |acc, c| acc * s + c);
        self.k * poly / s
    }

    /// Checks finiteness and positivity of `h` on a dense grid over the range.
    pub fn validate(&self) -> Result<()> {
        if !self.coefficients().iter().chain([&self.k]).all(|c| c.is_finite()) {
            return Err(Error::validation(
                "emission model",
                "coefficients must be finite",
            ));
        }
        let r = self.valid_range;
        for i in 0..=POSITIVITY_SAMPLES {
            let s = r.lo + (r.hi - r.lo) * i as f64 / POSITIVITY_SAMPLES as f64;
            let h = self.eval_unchecked(s);
            if !(h > 0.0) {
                return Err(Error::validation(
                    "emission model",
                    format!("h({s}) = {h} is not positive"),
                ));
            }
        }
        Ok(())
    }
}

/// A model coefficient written as a JSON number, a decimal string
/// (`"0.125"`), a rational string (`"22/28777"`) or a rational pair
/// (`[22, 28777]`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coef(pub f64);

impl FromStr for Coef {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        let value = match s.split_once('/') {
            Some((num, den)) => {
                let num: f64 = num.trim().parse().map_err(|e| format!("{s:?}: {e}"))?;
                let den: f64 = den.trim().parse().map_err(|e| format!("{s:?}: {e}"))?;
                if den == 0.0 {
                    return Err(format!("{s:?}: zero denominator"));
                }
                num / den
            }
            None => s.parse().map_err(|e| format!("{s:?}: {e}"))?,
        };
        if value.is_finite() {
            Ok(Coef(value))
        } else {
            Err(format!("{s:?} is not finite"))
        }
    }
}

impl<'de> Deserialize<'de> for Coef {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct CoefVisitor;

        impl<'de> de::Visitor<'de> for CoefVisitor {
            type Value = Coef;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number, a decimal or \"p/q\" string, or a [p, q] pair")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Coef, E> {
                Ok(Coef(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Coef, E> {
                Ok(Coef(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Coef, E> {
                Ok(Coef(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Coef, E> {
                v.parse().map_err(E::custom)
            }

            fn visit_seq<A: de::SeqAccess<'de>>(self, mut seq: A) -> std::result::Result<Coef, A::Error> {
                let num: f64 = seq
                    .next_element()?
                    .ok_or_else(|| de::Error::invalid_length(0, &self))?;
                let den: f64 = seq
                    .next_element()?
                    .ok_or_else(|| de::Error::invalid_length(1, &self))?;
                if seq.next_element::<f64>()?.is_some() {
                    return Err(de::Error::invalid_length(3, &self));
                }
                if den == 0.0 {
                    return Err(de::Error::custom("zero denominator"));
                }
                Ok(Coef(num / den))
            }
        }

        deserializer.deserialize_any(CoefVisitor)
    }
}

fn coef<'de, D: Deserializer<'de>>(deserializer: D) -> std::result::Result<f64, D::Error> {
    Coef::deserialize(deserializer).map(|c| c.0)
}
