//! Bus routes and their discretisation into one-second sections.
//!
//! A route file is JSON:
//!
//! ```json
//! { "fleet": [ { "bus_id": "b01", "segments": [ { "length_km": 1.0, "speed_kmh": 50 } ] } ] }
//! ```
//!
//! Each segment has a constant speed limit, which the bus is assumed to drive
//! at. [`discretize`] splits segments into the stretches covered in one second
//! at that speed, keeping a shorter remainder section so that lengths are
//! conserved exactly.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::SpeedRange;

/// Seconds per hour; a full section is `speed / SECONDS_PER_HOUR` km long.
const SECONDS_PER_HOUR: f64 = 3600.0;

/// Slack, in seconds, when deciding whether a segment ends on a section boundary.
const BOUNDARY_SLACK_S: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteSegment {
    pub length_km: f64,
    pub speed_kmh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub bus_id: String,
    pub segments: Vec<RouteSegment>,
}

impl Route {
    pub fn total_length_km(&self) -> f64 {
        self.segments.iter().map(|s| s.length_km).sum()
    }

    /// Checks the structural invariants, and the speed limits against `range`
    /// when one is given.
    pub fn validate(&self, range: Option<SpeedRange>) -> Result<()> {
        let what = || format!("route {:?}", self.bus_id);
        if self.bus_id.trim().is_empty() {
            return Err(Error::validation("route", "bus_id must not be empty"));
        }
        if self.segments.is_empty() {
            return Err(Error::validation(what(), "route has no segments"));
        }
        for (i, seg) in self.segments.iter().enumerate() {
            if !(seg.length_km.is_finite() && seg.length_km > 0.0) {
                return Err(Error::validation(
                    what(),
                    format!("segment {i}: length_km must be > 0, got {}", seg.length_km),
                ));
            }
            if !(seg.speed_kmh.is_finite() && seg.speed_kmh > 0.0) {
                return Err(Error::validation(
                    what(),
                    format!("segment {i}: speed_kmh must be > 0, got {}", seg.speed_kmh),
                ));
            }
            if let Some(r) = range {
                if !r.contains(seg.speed_kmh) {
                    return Err(Error::validation(
                        what(),
                        format!(
                            "segment {i}: speed_kmh {} is outside the model range [{}, {}]",
                            seg.speed_kmh, r.lo, r.hi
                        ),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Top-level shape of a route file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetFile {
    pub fleet: Vec<Route>,
}

/// Checks every route plus uniqueness of bus ids across the fleet.
pub fn validate_fleet(routes: &[Route], range: Option<SpeedRange>) -> Result<()> {
    if routes.is_empty() {
        return Err(Error::validation("fleet", "fleet is empty"));
    }
    let mut seen = HashSet::new();
    for route in routes {
        route.validate(range)?;
        if !seen.insert(route.bus_id.as_str()) {
            return Err(Error::validation(
                "fleet",
                format!("duplicate bus_id {:?}", route.bus_id),
            ));
        }
    }
    Ok(())
}

/// Parses and validates a fleet from JSON text. `origin` names the source in errors.
pub fn parse_fleet(text: &str, origin: &str) -> Result<Vec<Route>> {
    let file: FleetFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        context: format!("{origin} (line {}, column {})", e.line(), e.column()),
        message: e.to_string(),
    })?;
    validate_fleet(&file.fleet, None)?;
    Ok(file.fleet)
}

/// Reads a route file from disk.
pub fn load_fleet(path: impl AsRef<Path>) -> Result<Vec<Route>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_fleet(&text, &path.display().to_string())
}

pub fn write_fleet(path: impl AsRef<Path>, routes: &[Route]) -> Result<()> {
    let path = path.as_ref();
    let file = FleetFile {
        fleet: routes.to_vec(),
    };
    let text = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::Config(format!("serialising fleet: {e}")))?;
    crate::io::write_atomic(path, text.as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Section {
    pub length_km: f64,
    pub speed_kmh: f64,
    /// Index of the segment this section was cut from.
    pub segment: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectionedRoute {
    pub bus_id: String,
    pub sections: Vec<Section>,
}

impl SectionedRoute {
    pub fn total_length_km(&self) -> f64 {
        self.sections.iter().map(|s| s.length_km).sum()
    }
}

/// Splits every segment into one-second sections at its speed limit.
pub fn discretize(route: &Route) -> SectionedRoute {
    let mut sections = Vec::new();
    for (index, seg) in route.segments.iter().enumerate() {
        let full_len = seg.speed_kmh / SECONDS_PER_HOUR;
        let seconds = seg.length_km / full_len;
        let full = (seconds + BOUNDARY_SLACK_S).floor() as usize;
        sections.extend((0..full).map(|_| Section {
            length_km: full_len,
            speed_kmh: seg.speed_kmh,
            segment: index,
        }));
        let remainder = seg.length_km - full as f64 * full_len;
        if seconds - full as f64 > BOUNDARY_SLACK_S && remainder > 0.0 {
            sections.push(Section {
                length_km: remainder,
                speed_kmh: seg.speed_kmh,
                segment: index,
            });
        }
    }
    SectionedRoute {
        bus_id: route.bus_id.clone(),
        sections,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn route(segments: &[(f64, f64)]) -> Route {
        Route {
            bus_id: "b".into(),
            segments: segments
                .iter()
                .map(|&(length_km, speed_kmh)| RouteSegment {
                    length_km,
                    speed_kmh,
                })
                .collect(),
        }
    }

    #[test]
    fn one_second_of_travel_is_one_section() {
        let s = discretize(&route(&[(50.0 / 3600.0, 50.0)]));
        assert_eq!(s.sections.len(), 1);
        assert!((s.sections[0].length_km - 50.0 / 3600.0).abs() < 1e-15);
    }

    #[test]
    fn kilometre_at_36_kmh() {
        let s = discretize(&route(&[(1.0, 36.0)]));
        assert_eq!(s.sections.len(), 100);
        assert!(s.sections.iter().all(|x| (x.length_km - 0.01).abs() < 1e-15));
        assert!((s.total_length_km() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn remainder_section_is_kept() {
        // 0.025 km at 0.01 km/s: 2 full seconds and half a second left over.
        let s = discretize(&route(&[(0.025, 36.0)]));
        assert_eq!(s.sections.len(), 3);
        assert!((s.sections[2].length_km - 0.005).abs() < 1e-12);
        assert!((s.total_length_km() - 0.025).abs() < 1e-12);
    }

    #[test]
    fn order_and_parent_segments_preserved() {
        let r = route(&[(0.02, 36.0), (0.1, 72.0), (0.02, 36.0)]);
        let s = discretize(&r);
        let parents: Vec<usize> = s.sections.iter().map(|x| x.segment).collect();
        assert_eq!(parents, vec![0, 0, 1, 1, 1, 1, 1, 2, 2]);
        assert_eq!(s, discretize(&r));
    }

    #[test]
    fn minimal_file() {
        let text = r#"{"fleet":[{"bus_id":"only","segments":[{"length_km":1,"speed_kmh":50}]}]}"#;
        let fleet = parse_fleet(text, "inline").unwrap();
        assert_eq!(fleet.len(), 1);
        assert_eq!(fleet[0].segments.len(), 1);
    }

    #[test]
    fn duplicate_bus_id_is_named() {
        let text = r#"{"fleet":[
            {"bus_id":"x7","segments":[{"length_km":1,"speed_kmh":50}]},
            {"bus_id":"x7","segments":[{"length_km":2,"speed_kmh":40}]}]}"#;
        let err = parse_fleet(text, "inline").unwrap_err().to_string();
        assert!(err.contains("x7"), "{err}");
    }

    #[test]
    fn bad_segment_is_named() {
        let text = r#"{"fleet":[{"bus_id":"q","segments":[
            {"length_km":1,"speed_kmh":50},{"length_km":0,"speed_kmh":50}]}]}"#;
        let err = parse_fleet(text, "inline").unwrap_err().to_string();
        assert!(err.contains("segment 1"), "{err}");
    }

    #[test]
    fn parse_error_reports_position() {
        let text = "{\"fleet\": [\n  {\"bus_id\": 3}\n]}";
        let err = parse_fleet(text, "f.json").unwrap_err().to_string();
        assert!(err.contains("f.json (line 2"), "{err}");
    }

    #[test]
    fn speed_range_check() {
        let r = route(&[(1.0, 120.0)]);
        assert!(r.validate(None).is_ok());
        let err = r.validate(Some(SpeedRange::default())).unwrap_err().to_string();
        assert!(err.contains("segment 0"), "{err}");
    }

    #[test]
    fn empty_routes_rejected() {
        assert!(route(&[]).validate(None).is_err());
        assert!(validate_fleet(&[], None).is_err());
    }
}
