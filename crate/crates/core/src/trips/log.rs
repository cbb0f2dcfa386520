//! JSON-Lines trip logs: one trip per line.
//!
//! ```text
//! {"id": "t1", "obs": [{"t": 0, "x": 1.5, "y": -2, "h": 0.1, "q": 0, "kon": 1, "koff": 0}, ...]}
//! ```
//!
//! `lat`/`lon` may replace `x`/`y`; such positions are projected about the
//! centroid of every lat/lon sample in the file. Optional `v` (m/s) and `tod`
//! (hour of day) carry the car-signal stream.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LocalProjection, Observation, SignalStream, Trip, TripError};
use crate::real::{wrap_angle, Real};

/// A trip that parsed but was dropped for violating key-event bracketing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub line: usize,
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripLog<F> {
    pub trips: Vec<Trip<F>>,
    pub rejected: Vec<Rejection>,
    /// Set when any position was given as latitude/longitude.
    pub projection: Option<LocalProjection>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawTrip {
    id: String,
    obs: Vec<RawObs>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawObs {
    t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lon: Option<f64>,
    h: f64,
    q: u8,
    kon: u8,
    koff: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tod: Option<f64>,
}

pub fn parse_trips<F: Real>(path: impl AsRef<Path>) -> Result<TripLog<F>, TripError> {
    let text = fs::read_to_string(path)?;
    parse_trips_str(&text)
}

pub fn parse_trips_str<F: Real>(text: &str) -> Result<TripLog<F>, TripError> {
    let mut raws = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawTrip = serde_json::from_str(line).map_err(|e| TripError::Schema { line: i + 1, reason: e.to_string() })?;
        raws.push((i + 1, raw));
    }

    let latlon: Vec<(f64, f64)> = raws.iter().flat_map(|(_, r)| r.obs.iter()).filter_map(|o| Some((o.lat?, o.lon?))).collect();
    let projection = LocalProjection::about_centroid(&latlon);

    let mut log = TripLog { trips: Vec::new(), rejected: Vec::new(), projection: None };
    let mut used_projection = false;
    for (line, raw) in raws {
        let schema = |reason: String| TripError::Schema { line, reason };
        let mut obs = Vec::with_capacity(raw.obs.len());
        for (k, o) in raw.obs.iter().enumerate() {
            let r = match (o.x, o.y, o.lat, o.lon, projection) {
                (Some(x), Some(y), _, _, _) => [x, y],
                (_, _, Some(lat), Some(lon), Some(p)) => {
                    used_projection = true;
                    p.project(lat, lon)
                }
                _ => return Err(schema(format!("observation {k}: missing x/y (or lat/lon)"))),
            };
            if o.q > 1 || o.kon > 1 || o.koff > 1 {
                return Err(schema(format!("observation {k}: q/kon/koff must be 0 or 1")));
            }
            if !o.t.is_finite() || o.t < 0.0 || !o.h.is_finite() || !r[0].is_finite() || !r[1].is_finite() {
                return Err(schema(format!("observation {k}: non-finite or negative value")));
            }
            if o.kon == 1 && o.koff == 1 {
                return Err(schema(format!("observation {k}: both key-on and key-off set")));
            }
            if k > 0 && o.t <= raw.obs[k - 1].t {
                return Err(schema(format!("observation {k}: timestamp {} not after {}", o.t, raw.obs[k - 1].t)));
            }
            obs.push(Observation {
                t: F::lit(o.t),
                r: [F::lit(r[0]), F::lit(r[1])],
                h: wrap_angle(F::lit(o.h)),
                q: o.q == 1,
                k_on: o.kon == 1,
                k_off: o.koff == 1,
            });
        }

        let with_signals = raw.obs.iter().filter(|o| o.v.is_some() && o.tod.is_some()).count();
        let signals = if with_signals == 0 {
            None
        } else if with_signals == raw.obs.len() {
            Some(SignalStream {
                velocity: raw.obs.iter().map(|o| F::lit(o.v.unwrap_or_default())).collect(),
                hour: raw.obs.iter().map(|o| F::lit(o.tod.unwrap_or_default())).collect(),
            })
        } else {
            return Err(schema("signal fields v/tod present on only some observations".into()));
        };

        let trip = Trip { id: raw.id, obs, signals };
        match trip.check_bracketing() {
            Ok(()) => log.trips.push(trip),
            Err(e) => log.rejected.push(Rejection { line, id: trip.id.clone(), reason: e.to_string() }),
        }
    }
    if used_projection {
        log.projection = projection;
    }
    Ok(log)
}

/// Serializes trips as JSON Lines using planar `x`/`y` coordinates.
pub fn serialize_trips<F: Real>(trips: &[Trip<F>]) -> String {
    let mut out = String::new();
    for trip in trips {
        let obs = trip
            .obs
            .iter()
            .enumerate()
            .map(|(i, o)| RawObs {
                t: o.t.f64(),
                x: Some(o.r[0].f64()),
                y: Some(o.r[1].f64()),
                lat: None,
                lon: None,
                h: o.h.f64(),
                q: o.q as u8,
                kon: o.k_on as u8,
                koff: o.k_off as u8,
                v: trip.signals.as_ref().map(|s| s.velocity[i].f64()),
                tod: trip.signals.as_ref().map(|s| s.hour[i].f64()),
            })
            .collect();
        let raw = RawTrip { id: trip.id.clone(), obs };
        out.push_str(&serde_json::to_string(&raw).expect("trip serializes"));
        out.push('\n');
    }
    out
}

pub fn write_trips<F: Real>(path: impl AsRef<Path>, trips: &[Trip<F>]) -> Result<(), TripError> {
    let mut f = fs::File::create(path)?;
    f.write_all(serialize_trips(trips).as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ONE: &str =
        r#"{"id":"a","obs":[{"t":0,"x":1,"y":2,"h":0.5,"q":0,"kon":1,"koff":0},{"t":1.5,"x":3,"y":2,"h":0.5,"q":1,"kon":0,"koff":1}]}"#;

    #[test]
    fn parses_minimal_trip() {
        let log = parse_trips_str::<f64>(ONE).unwrap();
        assert_eq!(log.trips.len(), 1);
        assert!(log.rejected.is_empty());
        let t = &log.trips[0];
        assert_eq!(t.obs[1].r, [3.0, 2.0]);
        assert!(t.obs[1].q && t.obs[1].k_off);
    }

    #[test]
    fn non_increasing_timestamp_names_line() {
        let bad =
            r#"{"id":"b","obs":[{"t":2,"x":1,"y":2,"h":0.5,"q":0,"kon":1,"koff":0},{"t":2,"x":3,"y":2,"h":0.5,"q":0,"kon":0,"koff":1}]}"#;
        let text = format!("{ONE}\n{bad}\n");
        match parse_trips_str::<f64>(&text) {
            Err(TripError::Schema { line, reason }) => {
                assert_eq!(line, 2);
                assert!(reason.contains("timestamp"));
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn missing_key_off_rejected_others_kept() {
        let ok = |id: &str| ONE.replace("\"a\"", &format!("\"{id}\""));
        let open = r#"{"id":"open","obs":[{"t":0,"x":1,"y":2,"h":0.5,"q":0,"kon":1,"koff":0},{"t":1,"x":3,"y":2,"h":0.5,"q":0,"kon":0,"koff":0}]}"#;
        let text = [ok("a"), ok("b"), open.to_string(), ok("c")].join("\n");
        let log = parse_trips_str::<f64>(&text).unwrap();
        assert_eq!(log.trips.len(), 3);
        assert_eq!(log.rejected.len(), 1);
        assert_eq!(log.rejected[0].line, 3);
        assert_eq!(log.rejected[0].id, "open");
    }

    #[test]
    fn missing_field_is_schema_error() {
        let bad = r#"{"id":"a","obs":[{"t":0,"x":1,"y":2,"q":0,"kon":1,"koff":0}]}"#;
        assert!(matches!(parse_trips_str::<f64>(bad), Err(TripError::Schema { line: 1, .. })));
    }

    #[test]
    fn lat_lon_projected_about_centroid() {
        let text = r#"{"id":"a","obs":[{"t":0,"lat":42.0,"lon":-71.0,"h":0,"q":0,"kon":1,"koff":0},{"t":1,"lat":42.002,"lon":-71.0,"h":0,"q":0,"kon":0,"koff":1}]}"#;
        let log = parse_trips_str::<f64>(text).unwrap();
        let p = log.projection.unwrap();
        assert!((p.lat0 - 42.001).abs() < 1e-12);
        let t = &log.trips[0];
        assert!((t.obs[0].r[1] + 111.195).abs() < 0.01);
        assert!((t.obs[1].r[1] - 111.195).abs() < 0.01);
    }

    #[test]
    fn headings_are_wrapped() {
        let text = ONE.replace("\"h\":0.5", "\"h\":7.0");
        let log = parse_trips_str::<f64>(&text).unwrap();
        let h = log.trips[0].obs[0].h;
        assert!((h - (7.0 - std::f64::consts::TAU)).abs() < 1e-12);
    }

    fn arb_trip() -> impl Strategy<Value = Trip<f64>> {
        (2usize..8, any::<bool>()).prop_flat_map(|(n, sig)| {
            (
                prop::collection::vec((0.01f64..100.0, -1e4f64..1e4, -1e4f64..1e4, -3.1f64..3.1, any::<bool>()), n),
                prop::collection::vec((0.0f64..40.0, 0.0f64..24.0), n),
            )
                .prop_map(move |(steps, sigs)| {
                    let mut t = 0.0;
                    let last = steps.len() - 1;
                    let obs = steps
                        .iter()
                        .enumerate()
                        .map(|(i, &(dt, x, y, h, q))| {
                            if i > 0 {
                                t += dt;
                            }
                            Observation { t, r: [x, y], h, q, k_on: i == 0, k_off: i == last }
                        })
                        .collect();
                    let trip = Trip::new("p", obs).unwrap();
                    if sig {
                        trip.with_signals(SignalStream {
                            velocity: sigs.iter().map(|s| s.0).collect(),
                            hour: sigs.iter().map(|s| s.1).collect(),
                        })
                        .unwrap()
                    } else {
                        trip
                    }
                })
        })
    }

    proptest! {
        #[test]
        fn serialize_then_parse_is_identity(trips in prop::collection::vec(arb_trip(), 1..4)) {
            let text = serialize_trips(&trips);
            let log = parse_trips_str::<f64>(&text).unwrap();
            prop_assert!(log.rejected.is_empty());
            prop_assert_eq!(log.trips, trips);
        }
    }
}
