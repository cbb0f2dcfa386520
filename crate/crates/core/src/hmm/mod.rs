//! Trip HMM over source, destination and road-segment states.
//!
//! Road emissions are stored once per road segment and shared by every
//! source-augmented copy of that segment. Sources and destinations whose
//! centers coincide share one record for their physical location.

mod em;
mod extract;
mod init;
mod viterbi;

pub use em::{augment_with_source, em_fit, path_objective, EmConfig, EmFit};
pub use extract::extract_corpus;
pub use init::{init_model, InitConfig};
pub use viterbi::{prefix_states, viterbi, Decoded};

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::real::{wrap_angle, Real};
use crate::trips::{Observation, Trip};

pub const FORMAT_VERSION: u32 = 1;
/// Smallest eigenvalue allowed for a position covariance (m^2).
pub const POSITION_FLOOR: f64 = 1.0;
/// Smallest heading variance (rad^2).
pub const HEADING_FLOOR: f64 = 0.01;
/// Bounds keeping the dead-reckoning probability away from 0 and 1.
pub const P_Q_BOUNDS: (f64, f64) = (1e-3, 1.0 - 1e-3);

#[derive(Debug, Error)]
pub enum HmmError {
    #[error("no trips to train on")]
    NoTrips,
    #[error("trip {trip} has no feasible state sequence")]
    Undecodable { trip: String },
    #[error("trip {trip}: {reason}")]
    Signals { trip: String, reason: String },
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StateKind {
    Source(usize),
    Destination(usize),
    Road(usize),
    RoadAug { road: usize, source: usize },
}

impl StateKind {
    pub fn road(self) -> Option<usize> {
        match self {
            StateKind::Road(r) | StateKind::RoadAug { road: r, .. } => Some(r),
            _ => None,
        }
    }

    pub fn is_destination(self) -> bool {
        matches!(self, StateKind::Destination(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionParams<F> {
    pub mu_r: [F; 2],
    pub sigma_r: [[F; 2]; 2],
    pub mu_h: F,
    pub sigma_h: F,
    pub p_q: F,
}

impl<F: Real> EmissionParams<F> {
    pub fn isotropic(mu_r: [F; 2], var: F, mu_h: F, sigma_h: F, p_q: F) -> Self {
        Self { mu_r, sigma_r: [[var, F::zero()], [F::zero(), var]], mu_h, sigma_h, p_q }
    }

    /// Log density of one observation, ignoring key events. Dead-reckoned
    /// positions see the covariance inflated by `c`.
    pub fn loglik(&self, obs: &Observation<F>, c: F) -> F {
        let two = F::lit(2.0);
        let half = F::lit(0.5);
        let scale = if obs.q { c } else { F::one() };
        let [[a, b], [_, d]] = self.sigma_r;
        let (a, b, d) = (a * scale, b * scale, d * scale);
        let det = a * d - b * b;
        let dx = obs.r[0] - self.mu_r[0];
        let dy = obs.r[1] - self.mu_r[1];
        let quad = (d * dx * dx - two * b * dx * dy + a * dy * dy) / det;
        let pos = -(two * F::PI()).ln() - half * det.ln() - half * quad;

        let e = wrap_angle(obs.h - self.mu_h);
        let head = -half * (two * F::PI() * self.sigma_h).ln() - half * e * e / self.sigma_h;

        let q = if obs.q { self.p_q.ln() } else { (F::one() - self.p_q).ln() };
        pos + head + q
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmmHyper<F> {
    /// Dirichlet parameter of every transition row; must lie in (0, 1).
    pub alpha: F,
    /// Covariance inflation for dead-reckoned positions; must exceed 1.
    pub c: F,
}

impl<F: Real> Default for HmmHyper<F> {
    fn default() -> Self {
        Self { alpha: F::lit(0.5), c: F::lit(10.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmModel<F> {
    pub format_version: u32,
    pub hyper: HmmHyper<F>,
    /// Ordered sources, destinations, then roads (augmented copies by source, then road).
    pub states: Vec<StateKind>,
    pub theta0: Vec<F>,
    /// Sparse rows of `(target, probability)`, targets ascending.
    pub trans: Vec<Vec<(usize, F)>>,
    pub emissions: Vec<EmissionParams<F>>,
    /// Emission record of each source, destination and road id.
    pub source_record: Vec<usize>,
    pub destination_record: Vec<usize>,
    pub road_record: Vec<usize>,
}

impl<F: Real> HmmModel<F> {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_sources(&self) -> usize {
        self.source_record.len()
    }

    pub fn n_destinations(&self) -> usize {
        self.destination_record.len()
    }

    pub fn n_roads(&self) -> usize {
        self.road_record.len()
    }

    pub fn is_augmented(&self) -> bool {
        self.states.iter().any(|s| matches!(s, StateKind::RoadAug { .. }))
    }

    pub fn record_of(&self, state: usize) -> usize {
        match self.states[state] {
            StateKind::Source(s) => self.source_record[s],
            StateKind::Destination(d) => self.destination_record[d],
            StateKind::Road(r) | StateKind::RoadAug { road: r, .. } => self.road_record[r],
        }
    }

    pub fn emission(&self, state: usize) -> &EmissionParams<F> {
        &self.emissions[self.record_of(state)]
    }

    /// State index of destination `d`.
    pub fn destination_state(&self, d: usize) -> Option<usize> {
        self.states.iter().position(|&k| k == StateKind::Destination(d))
    }

    pub fn destination_states(&self) -> Vec<usize> {
        (0..self.n_states()).filter(|&i| self.states[i].is_destination()).collect()
    }

    pub fn trans_prob(&self, i: usize, j: usize) -> F {
        self.trans[i].iter().find(|e| e.0 == j).map_or(F::zero(), |e| e.1)
    }

    /// Checks structure, normalization and emission floors.
    pub fn validate(&self) -> Result<(), HmmError> {
        let bad = |m: String| Err(HmmError::Invalid(m));
        let n = self.n_states();
        if self.theta0.len() != n || self.trans.len() != n {
            return bad("theta0/trans length differs from state count".into());
        }
        if !(self.hyper.alpha > F::zero() && self.hyper.alpha < F::one()) || !(self.hyper.c > F::one()) {
            return bad("alpha must lie in (0, 1) and c must exceed 1".into());
        }
        let nrec = self.emissions.len();
        let all_records = self.source_record.iter().chain(&self.destination_record).chain(&self.road_record);
        if all_records.clone().any(|&r| r >= nrec) {
            return bad("emission record index out of range".into());
        }
        let mut prev: Option<(u8, StateKind)> = None;
        for (i, kind) in self.states.iter().enumerate() {
            let (rank, ok) = match *kind {
                StateKind::Source(s) => (0, s < self.n_sources()),
                StateKind::Destination(d) => (1, d < self.n_destinations()),
                StateKind::Road(r) => (2, r < self.n_roads()),
                StateKind::RoadAug { road, source } => (2, road < self.n_roads() && source < self.n_sources()),
            };
            if !ok {
                return bad(format!("state {i} refers to a missing id"));
            }
            let key = match *kind {
                StateKind::RoadAug { road, source } => StateKind::RoadAug { road: source, source: road },
                k => k,
            };
            if let Some((pr, pk)) = prev {
                if rank < pr || (rank == pr && key <= pk) {
                    return bad(format!("state {i} is out of order"));
                }
            }
            prev = Some((rank, key));
        }
        let tol = F::lit(1e-9);
        let sum0: F = self.theta0.iter().copied().sum();
        if (sum0 - F::one()).abs() > tol || self.theta0.iter().any(|p| *p < F::zero()) {
            return bad("theta0 is not a distribution".into());
        }
        for (i, row) in self.trans.iter().enumerate() {
            let s: F = row.iter().map(|e| e.1).sum();
            if (s - F::one()).abs() > tol || row.iter().any(|e| e.0 >= n || !(e.1 > F::zero())) {
                return bad(format!("transition row {i} is not a distribution"));
            }
            if row.windows(2).any(|w| w[0].0 >= w[1].0) {
                return bad(format!("transition row {i} targets are not ascending"));
            }
            if self.states[i].is_destination() && row.as_slice() != [(i, F::one())] {
                return bad(format!("destination state {i} is not absorbing"));
            }
        }
        for (k, e) in self.emissions.iter().enumerate() {
            let [[a, b], [b2, d]] = e.sigma_r;
            let floor = F::lit(POSITION_FLOOR) * F::lit(1.0 - 1e-9);
            let (lo, _) = eig2(a.f64(), b.f64(), d.f64());
            if b != b2 || lo < floor.f64() || e.sigma_h < F::lit(HEADING_FLOOR) * F::lit(1.0 - 1e-9) {
                return bad(format!("emission record {k} violates covariance floors"));
            }
            if !(e.p_q >= F::zero() && e.p_q <= F::one()) {
                return bad(format!("emission record {k} has p_q outside [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), HmmError> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HmmError> {
        let model: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        if model.format_version != FORMAT_VERSION {
            return Err(HmmError::Invalid(format!("unsupported format version {}", model.format_version)));
        }
        model.validate()?;
        Ok(model)
    }
}

/// Key-event term: 0 when the flags agree with the state kind, -inf otherwise.
fn key_term<F: Real>(kind: StateKind, obs: &Observation<F>) -> F {
    let ok = match kind {
        StateKind::Source(_) => obs.k_on && !obs.k_off,
        StateKind::Destination(_) => obs.k_off && !obs.k_on,
        StateKind::Road(_) | StateKind::RoadAug { .. } => !obs.k_on && !obs.k_off,
    };
    if ok {
        F::zero()
    } else {
        F::neg_infinity()
    }
}

pub fn obs_loglik<F: Real>(model: &HmmModel<F>, state: usize, obs: &Observation<F>) -> F {
    let k = key_term(model.states[state], obs);
    if k == F::neg_infinity() {
        return k;
    }
    model.emission(state).loglik(obs, model.hyper.c)
}

/// Joint log-likelihood of a trip along a given state path.
pub fn path_loglik<F: Real>(model: &HmmModel<F>, trip: &Trip<F>, path: &[usize]) -> F {
    assert_eq!(path.len(), trip.obs.len(), "path and trip lengths differ");
    let mut ll = model.theta0[path[0]].ln();
    for (t, (&x, o)) in path.iter().zip(&trip.obs).enumerate() {
        if t > 0 {
            ll += model.trans_prob(path[t - 1], x).ln();
        }
        ll += obs_loglik(model, x, o);
    }
    ll
}

/// Eigenvalues (ascending) of the symmetric matrix [[a, b], [b, d]].
pub(crate) fn eig2(a: f64, b: f64, d: f64) -> (f64, f64) {
    let m = 0.5 * (a + d);
    let r = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    (m - r, m + r)
}

/// Clamps the eigenvalues of a symmetric 2x2 matrix from below, keeping its
/// eigenvectors. Returns whether clamping happened.
pub(crate) fn clamp_cov(a: f64, b: f64, d: f64, floor: f64) -> ([[f64; 2]; 2], bool) {
    let (lo, hi) = eig2(a, b, d);
    if lo >= floor {
        return ([[a, b], [b, d]], false);
    }
    // unit eigenvector of the larger eigenvalue
    let (vx, vy) = if b.abs() > 1e-300 {
        let (x, y) = (hi - d, b);
        let n = (x * x + y * y).sqrt();
        (x / n, y / n)
    } else if a >= d {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    };
    let (l1, l2) = (hi.max(floor), lo.max(floor));
    let (ux, uy) = (-vy, vx);
    let out = [[l1 * vx * vx + l2 * ux * ux, l1 * vx * vy + l2 * ux * uy], [l1 * vx * vy + l2 * ux * uy, l1 * vy * vy + l2 * uy * uy]];
    (out, true)
}
