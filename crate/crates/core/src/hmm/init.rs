use serde::{Deserialize, Serialize};

use super::{
    clamp_cov, EmissionParams, HmmError, HmmHyper, HmmModel, StateKind, FORMAT_VERSION, HEADING_FLOOR, POSITION_FLOOR, P_Q_BOUNDS,
};
use crate::quantize::dp_means;
use crate::real::{circular_ls_mean, Real};
use crate::trips::{Observation, Trip};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    /// DP-means penalty for position clusters (m).
    pub lambda_pos: f64,
    /// Length scale of the initial transition decay (m).
    pub proximity_scale: f64,
    /// Meters per radian when heading joins the road clustering features.
    pub heading_scale: f64,
    /// Key-on and key-off clusters closer than this share one record (m).
    pub colocation: f64,
    pub augmented: bool,
    pub max_iter: usize,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self { lambda_pos: 50.0, proximity_scale: 100.0, heading_scale: 10.0, colocation: 30.0, augmented: false, max_iter: 100 }
    }
}

/// Emission record estimated from a cluster's observations. Small clusters
/// get an isotropic covariance of `(lambda / 2)^2` so the first decoding is
/// not dominated by spuriously tight clusters.
fn fit_record<F: Real>(members: &[&Observation<F>], lambda: f64) -> EmissionParams<F> {
    let n = members.len() as f64;
    let mx = members.iter().map(|o| o.r[0].f64()).sum::<f64>() / n;
    let my = members.iter().map(|o| o.r[1].f64()).sum::<f64>() / n;
    let sigma = if members.len() < 3 {
        let v = (0.25 * lambda * lambda).max(POSITION_FLOOR);
        [[v, 0.0], [0.0, v]]
    } else {
        let (mut a, mut b, mut d) = (0.0, 0.0, 0.0);
        for o in members {
            let dx = o.r[0].f64() - mx;
            let dy = o.r[1].f64() - my;
            a += dx * dx;
            b += dx * dy;
            d += dy * dy;
        }
        clamp_cov(a / n, b / n, d / n, POSITION_FLOOR).0
    };
    let headings: Vec<F> = members.iter().map(|o| o.h).collect();
    let (loc, cost) = circular_ls_mean(&headings, F::TAU());
    let p_q = members.iter().filter(|o| o.q).count() as f64 / n;
    EmissionParams {
        mu_r: [F::lit(mx), F::lit(my)],
        sigma_r: sigma.map(|row| row.map(F::lit)),
        mu_h: crate::real::wrap_angle(loc),
        sigma_h: (cost / F::lit(n)).max(F::lit(HEADING_FLOOR)),
        p_q: F::lit(p_q.clamp(P_Q_BOUNDS.0, P_Q_BOUNDS.1)),
    }
}

fn cluster<F: Real>(obs: &[&Observation<F>], features: impl Fn(&Observation<F>) -> Vec<F>, cfg: &InitConfig) -> Vec<EmissionParams<F>> {
    if obs.is_empty() {
        return Vec::new();
    }
    let points: Vec<Vec<F>> = obs.iter().map(|o| features(o)).collect();
    let fit = dp_means(&points, F::lit(cfg.lambda_pos), cfg.max_iter).expect("non-empty points and positive lambda");
    (0..fit.codebook.len())
        .map(|k| {
            let members: Vec<&Observation<F>> = obs.iter().zip(&fit.labels).filter(|(_, &l)| l == k).map(|(o, _)| *o).collect();
            fit_record(&members, cfg.lambda_pos)
        })
        .collect()
}

fn dist<F: Real>(a: &EmissionParams<F>, b: &EmissionParams<F>) -> f64 {
    let dx = a.mu_r[0].f64() - b.mu_r[0].f64();
    let dy = a.mu_r[1].f64() - b.mu_r[1].f64();
    (dx * dx + dy * dy).sqrt()
}

/// Initial model from DP-means clusters of the trips' observations.
///
/// Roads cluster `(x, y, s cos h, s sin h)` of every observation without a key
/// event; sources and destinations cluster key-on and key-off positions.
/// Transition rows start dense over the structurally allowed targets with
/// weight `exp(-distance / proximity_scale)`.
pub fn init_model<F: Real>(trips: &[Trip<F>], cfg: &InitConfig, hyper: HmmHyper<F>) -> Result<HmmModel<F>, HmmError> {
    if trips.is_empty() {
        return Err(HmmError::NoTrips);
    }
    if !(cfg.lambda_pos > 0.0) || !(cfg.proximity_scale > 0.0) || cfg.heading_scale < 0.0 {
        return Err(HmmError::Invalid("lambda_pos and proximity_scale must be positive".into()));
    }
    let all = || trips.iter().flat_map(|t| t.obs.iter());
    let key_on: Vec<&Observation<F>> = all().filter(|o| o.k_on).collect();
    let key_off: Vec<&Observation<F>> = all().filter(|o| o.k_off).collect();
    let road_obs: Vec<&Observation<F>> = all().filter(|o| !o.k_on && !o.k_off).collect();
    if key_on.is_empty() || key_off.is_empty() {
        return Err(HmmError::Invalid("trips carry no key-on or key-off events".into()));
    }

    let position = |o: &Observation<F>| vec![o.r[0], o.r[1]];
    let s = F::lit(cfg.heading_scale);
    let road_features = |o: &Observation<F>| vec![o.r[0], o.r[1], s * o.h.cos(), s * o.h.sin()];
    let sources = cluster(&key_on, position, cfg);
    let destinations = cluster(&key_off, position, cfg);
    let roads = cluster(&road_obs, road_features, cfg);

    // greedy pairing of co-located destination and source clusters
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (si, se) in sources.iter().enumerate() {
        for (di, de) in destinations.iter().enumerate() {
            let d = dist(se, de);
            if d <= cfg.colocation {
                pairs.push((d, si, di));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut shared_with: Vec<Option<usize>> = vec![None; destinations.len()];
    let mut taken = vec![false; sources.len()];
    for (_, si, di) in pairs {
        if !taken[si] && shared_with[di].is_none() {
            taken[si] = true;
            shared_with[di] = Some(si);
        }
    }

    let mut emissions: Vec<EmissionParams<F>> = Vec::new();
    let mut source_record = Vec::new();
    for (si, rec) in sources.iter().enumerate() {
        let partner = shared_with.iter().position(|p| *p == Some(si));
        source_record.push(emissions.len());
        match partner {
            // one record pooled over both clusters' centers
            Some(di) => emissions.push(merge_records(rec, &destinations[di])),
            None => emissions.push(rec.clone()),
        }
    }
    let mut destination_record = Vec::new();
    for (di, rec) in destinations.iter().enumerate() {
        match shared_with[di] {
            Some(si) => destination_record.push(source_record[si]),
            None => {
                destination_record.push(emissions.len());
                emissions.push(rec.clone());
            }
        }
    }
    let road_record: Vec<usize> = (0..roads.len()).map(|r| emissions.len() + r).collect();
    emissions.extend(roads);

    let ns = sources.len();
    let nd = destinations.len();
    let nr = road_record.len();
    let mut states: Vec<StateKind> = (0..ns).map(StateKind::Source).collect();
    states.extend((0..nd).map(StateKind::Destination));
    if cfg.augmented {
        for s in 0..ns {
            states.extend((0..nr).map(|r| StateKind::RoadAug { road: r, source: s }));
        }
    } else {
        states.extend((0..nr).map(StateKind::Road));
    }

    let mut model = HmmModel {
        format_version: FORMAT_VERSION,
        hyper,
        states,
        theta0: Vec::new(),
        trans: Vec::new(),
        emissions,
        source_record,
        destination_record,
        road_record,
    };
    let n = model.n_states();
    model.theta0 =
        (0..n).map(|i| if matches!(model.states[i], StateKind::Source(_)) { F::one() / F::from_count(ns) } else { F::zero() }).collect();
    model.trans = (0..n)
        .map(|i| {
            let from = model.states[i];
            if from.is_destination() {
                return vec![(i, F::one())];
            }
            let mut row: Vec<(usize, f64)> = (0..n)
                .filter(|&j| allowed(from, model.states[j]))
                .map(|j| (j, (-dist(model.emission(i), model.emission(j)) / cfg.proximity_scale).exp()))
                .collect();
            let total: f64 = row.iter().map(|e| e.1).sum();
            if !(total > 0.0) {
                // everything underflowed: fall back to uniform
                let u = 1.0 / row.len() as f64;
                row.iter_mut().for_each(|e| e.1 = u);
            } else {
                row.iter_mut().for_each(|e| e.1 /= total);
            }
            row.into_iter().filter(|e| e.1 > 0.0).map(|(j, p)| (j, F::lit(p))).collect()
        })
        .collect();
    Ok(model)
}

/// Transitions a trip can take: source to road or destination, road to road
/// (same source copy) or destination.
fn allowed(from: StateKind, to: StateKind) -> bool {
    use StateKind::*;
    match (from, to) {
        (Source(_), Destination(_)) | (Road(_), Destination(_)) | (RoadAug { .. }, Destination(_)) => true,
        (Source(_), Road(_)) | (Road(_), Road(_)) => true,
        (Source(s), RoadAug { source, .. }) => s == source,
        (RoadAug { source: a, .. }, RoadAug { source: b, .. }) => a == b,
        _ => false,
    }
}

fn merge_records<F: Real>(a: &EmissionParams<F>, b: &EmissionParams<F>) -> EmissionParams<F> {
    let half = F::lit(0.5);
    let mut out = a.clone();
    out.mu_r = [half * (a.mu_r[0] + b.mu_r[0]), half * (a.mu_r[1] + b.mu_r[1])];
    for i in 0..2 {
        for j in 0..2 {
            out.sigma_r[i][j] = half * (a.sigma_r[i][j] + b.sigma_r[i][j]);
        }
    }
    out.sigma_h = a.sigma_h.max(b.sigma_h);
    out
}
