//! Trip data model, JSON-Lines trip logs, and synthetic ground-truth generators.

mod log;
mod synth;
mod synth_corpus;

pub use self::log::{parse_trips, parse_trips_str, serialize_trips, write_trips, Rejection, TripLog};
pub use synth::{
    generate_world, sample_trips, GroundTruth, NoiseConfig, RouteChoice, SampledTrip, SignalConfig, SyntheticWorld, TripTruth, WorldConfig,
};
pub use synth_corpus::{generate_corpus_truth, sample_corpus, CorpusConfig, PlantedCorpus, SyntheticCorpusTruth};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::real::{wrap_angle, Real};

#[derive(Debug, Error)]
pub enum TripError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Schema { line: usize, reason: String },
    #[error("invalid trip: {0}")]
    Invalid(String),
    #[error("invalid synthetic configuration: {0}")]
    Config(String),
    #[error("destination node {destination} is unreachable from source node {source_node}")]
    Unreachable { source_node: usize, destination: usize },
}

/// A single timestamped measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation<F> {
    /// Seconds since trip start.
    pub t: F,
    /// Planar position in meters.
    pub r: [F; 2],
    /// Heading in radians, in (-pi, pi].
    pub h: F,
    /// Position was inferred by dead reckoning.
    pub q: bool,
    pub k_on: bool,
    pub k_off: bool,
}

impl<F: Real> Observation<F> {
    pub fn new(t: F, r: [F; 2], h: F) -> Self {
        Self { t, r, h: wrap_angle(h), q: false, k_on: false, k_off: false }
    }

    pub fn cast<G: Real>(&self) -> Observation<G> {
        Observation {
            t: G::lit(self.t.f64()),
            r: [G::lit(self.r[0].f64()), G::lit(self.r[1].f64())],
            h: G::lit(self.h.f64()),
            q: self.q,
            k_on: self.k_on,
            k_off: self.k_off,
        }
    }
}

/// Car signals aligned with a trip's observations: speed (m/s) and hour of day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalStream<F> {
    pub velocity: Vec<F>,
    pub hour: Vec<F>,
}

impl<F: Real> SignalStream<F> {
    pub fn len(&self) -> usize {
        self.velocity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.velocity.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trip<F> {
    pub id: String,
    pub obs: Vec<Observation<F>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signals: Option<SignalStream<F>>,
}

impl<F: Real> Trip<F> {
    /// Builds a trip, checking every invariant.
    pub fn new(id: impl Into<String>, obs: Vec<Observation<F>>) -> Result<Self, TripError> {
        let trip = Self { id: id.into(), obs, signals: None };
        trip.validate()?;
        Ok(trip)
    }

    pub fn with_signals(mut self, signals: SignalStream<F>) -> Result<Self, TripError> {
        if signals.velocity.len() != self.obs.len() || signals.hour.len() != self.obs.len() {
            return Err(TripError::Invalid(format!(
                "trip {}: signal stream length {} does not match {} observations",
                self.id,
                signals.velocity.len(),
                self.obs.len()
            )));
        }
        self.signals = Some(signals);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn validate(&self) -> Result<(), TripError> {
        self.check_samples()?;
        self.check_bracketing()
    }

    /// Timestamp, heading and flag checks that apply to every observation.
    pub(crate) fn check_samples(&self) -> Result<(), TripError> {
        let bad = |msg: String| Err(TripError::Invalid(format!("trip {}: {msg}", self.id)));
        for (i, o) in self.obs.iter().enumerate() {
            if !(o.t >= F::zero()) || !o.t.is_finite() {
                return bad(format!("observation {i} has invalid time"));
            }
            if !(o.h > -F::PI() && o.h <= F::PI()) {
                return bad(format!("observation {i} heading outside (-pi, pi]"));
            }
            if o.k_on && o.k_off {
                return bad(format!("observation {i} has both key-on and key-off"));
            }
            if i > 0 && !(o.t > self.obs[i - 1].t) {
                return bad(format!("observation {i} timestamp not strictly increasing"));
            }
        }
        Ok(())
    }

    /// Key-on first, key-off last, nothing in between.
    pub(crate) fn check_bracketing(&self) -> Result<(), TripError> {
        let bad = |msg: &str| Err(TripError::Invalid(format!("trip {}: {msg}", self.id)));
        if self.obs.len() < 2 {
            return bad("fewer than two observations");
        }
        let last = self.obs.len() - 1;
        if !self.obs[0].k_on {
            return bad("first observation lacks key-on");
        }
        if !self.obs[last].k_off {
            return bad("last observation lacks key-off");
        }
        if self.obs[1..last].iter().any(|o| o.k_on || o.k_off) || self.obs[0].k_off || self.obs[last].k_on {
            return bad("key event inside the trip");
        }
        Ok(())
    }

    pub fn cast<G: Real>(&self) -> Trip<G> {
        Trip {
            id: self.id.clone(),
            obs: self.obs.iter().map(Observation::cast).collect(),
            signals: self.signals.as_ref().map(|s| SignalStream {
                velocity: s.velocity.iter().map(|v| G::lit(v.f64())).collect(),
                hour: s.hour.iter().map(|v| G::lit(v.f64())).collect(),
            }),
        }
    }
}

/// Equirectangular projection about a reference point, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalProjection {
    pub lat0: f64,
    pub lon0: f64,
}

impl LocalProjection {
    pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

    /// Projection centered on the mean of the given (lat, lon) pairs.
    pub fn about_centroid(points: &[(f64, f64)]) -> Option<Self> {
        if points.is_empty() {
            return None;
        }
        let n = points.len() as f64;
        let lat0 = points.iter().map(|p| p.0).sum::<f64>() / n;
        let lon0 = points.iter().map(|p| p.1).sum::<f64>() / n;
        Some(Self { lat0, lon0 })
    }

    pub fn project(&self, lat: f64, lon: f64) -> [f64; 2] {
        let x = Self::EARTH_RADIUS_M * (lon - self.lon0).to_radians() * self.lat0.to_radians().cos();
        let y = Self::EARTH_RADIUS_M * (lat - self.lat0).to_radians();
        [x, y]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(t: f64, k_on: bool, k_off: bool) -> Observation<f64> {
        Observation { t, r: [t, 0.0], h: 0.0, q: false, k_on, k_off }
    }

    #[test]
    fn minimal_trip_is_valid() {
        let trip = Trip::new("a", vec![obs(0.0, true, false), obs(1.0, false, true)]).unwrap();
        assert_eq!(trip.len(), 2);
    }

    #[test]
    fn key_flags_in_the_middle_are_rejected() {
        let r = Trip::new("a", vec![obs(0.0, true, false), obs(1.0, true, false), obs(2.0, false, true)]);
        assert!(r.is_err());
    }

    #[test]
    fn both_flags_on_one_observation_rejected() {
        let r = Trip::new("a", vec![obs(0.0, true, true), obs(1.0, false, true)]);
        assert!(r.is_err());
    }

    #[test]
    fn projection_is_metric_near_centroid() {
        let p = LocalProjection { lat0: 42.0, lon0: -71.0 };
        let [x, y] = p.project(42.001, -71.0);
        assert!(x.abs() < 1e-9);
        assert!((y - 111.195).abs() < 0.01, "{y}");
        let [x, _] = p.project(42.0, -70.999);
        assert!((x - 111.195 * 42f64.to_radians().cos()).abs() < 0.01);
    }
}
