//! Seeded synthetic fleets for tests and demos.
//!
//! Buses differ in route length and in their speed mix, from slow inner-city
//! routes to fast suburban ones, which gives the utility curves a spread of
//! capacities and slopes. None of this is measured data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::models::{EmissionModel, EnergyModel, SpeedRange};
use crate::routes::{discretize, Route, RouteSegment};
use crate::utility::{build_utility, section_values, ObjectiveMode};

const MIN_SPEED: f64 = 8.0;
const MAX_SPEED: f64 = 95.0;

/// Made-up emission curve `h(s) = 0.26 · (110 − s)² · e(s)` g/km, where `e` is
/// the default energy model.
///
/// Grams saved per kWh then fall steadily with speed, from about 2700 at
/// 8 km/h to under 60 at 95 km/h, so every bus has a strongly concave
/// utility. Expanded into the polynomial form of [`EmissionModel`].
pub fn synthetic_emission_model() -> EmissionModel {
    let e = EnergyModel::default();
    let factor = [0.0, 110.0 * 110.0, -220.0, 1.0]; // s·(110 − s)²
    let energy = [e.alpha2, e.alpha1, e.alpha0];
    let mut coefficients = [0.0; 7];
    for (i, f) in factor.iter().enumerate() {
        for (j, q) in energy.iter().enumerate() {
            coefficients[i + j] += 0.26 * f * q;
        }
    }
    EmissionModel::from_coefficients(coefficients, 1.0, SpeedRange::default())
}

/// Generates `buses` routes. Identical `(buses, seed)` give identical fleets.
pub fn generate_fleet(buses: usize, seed: u64) -> Vec<Route> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..buses)
        .map(|i| {
            let position = if buses > 1 {
                i as f64 / (buses - 1) as f64
            } else {
                0.5
            };
            let mean_speed = 30.0 + 12.0 * position + rng.random_range(-3.0..3.0);
            let spread = rng.random_range(12.0..20.0);
            let speeds = Normal::new(mean_speed, spread).expect("positive spread");
            let target_km = rng.random_range(10.0..28.0);
            let mut segments = Vec::new();
            let mut length = 0.0;
            while length < target_km {
                let length_km = rng.random_range(0.05..0.25);
                let speed_kmh = speeds.sample(&mut rng).clamp(MIN_SPEED, MAX_SPEED);
                segments.push(RouteSegment {
                    length_km,
                    speed_kmh,
                });
                length += length_km;
            }
            Route {
                bus_id: format!("bus{:02}", i + 1),
                segments,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusManifest {
    pub bus_id: String,
    pub segments: usize,
    pub sections: usize,
    pub length_km: f64,
    /// Energy to drive the whole route electrically, kWh.
    pub capacity_kwh: f64,
    /// Savings if the whole route is driven electrically, grams.
    pub full_savings_g: f64,
}

/// Summary written next to a generated fleet, used to check loaders against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetManifest {
    pub synthetic: bool,
    pub seed: u64,
    pub energy_model: EnergyModel,
    pub emission_model: EmissionModel,
    pub objective_mode: ObjectiveMode,
    pub buses: Vec<BusManifest>,
    pub total_length_km: f64,
    pub total_capacity_kwh: f64,
}

pub fn manifest(
    routes: &[Route],
    seed: u64,
    energy: &EnergyModel,
    emission: &EmissionModel,
    mode: ObjectiveMode,
) -> Result<FleetManifest> {
    let mut buses = Vec::with_capacity(routes.len());
    for route in routes {
        let sectioned = discretize(route);
        let values = section_values(&sectioned, energy, emission, mode)?;
        let sections = values.len();
        let u = build_utility(route.bus_id.clone(), values)?;
        buses.push(BusManifest {
            bus_id: route.bus_id.clone(),
            segments: route.segments.len(),
            sections,
            length_km: route.total_length_km(),
            capacity_kwh: u.capacity(),
            full_savings_g: u.total_savings(),
        });
    }
    Ok(FleetManifest {
        synthetic: true,
        seed,
        energy_model: *energy,
        emission_model: *emission,
        objective_mode: mode,
        total_length_km: buses.iter().map(|b| b.length_km).sum(),
        total_capacity_kwh: buses.iter().map(|b| b.capacity_kwh).sum(),
        buses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::routes::validate_fleet;

    #[test]
    fn generator_is_seeded() {
        assert_eq!(generate_fleet(4, 3), generate_fleet(4, 3));
        assert_ne!(generate_fleet(4, 3), generate_fleet(4, 4));
    }

    #[test]
    fn generated_fleet_is_valid() {
        let fleet = generate_fleet(15, 1);
        assert_eq!(fleet.len(), 15);
        validate_fleet(&fleet, Some(SpeedRange::default())).unwrap();
        synthetic_emission_model().validate().unwrap();
    }

    #[test]
    fn emission_curve_shape() {
        let h = synthetic_emission_model();
        let at = |s| h.emission_rate(s).unwrap();
        let e = EnergyModel::default();
        for s in [8.0, 30.0, 50.0, 95.0] {
            let expected = 0.26 * (110.0 - s) * (110.0 - s) * e.energy_per_km(s).unwrap();
            assert!((at(s) - expected).abs() < 1e-9 * expected);
        }
        assert!(at(10.0) > at(50.0) && at(50.0) > at(90.0));
    }
}
