use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{clamp_cov, path_loglik, viterbi, HmmError, HmmModel, StateKind, HEADING_FLOOR, POSITION_FLOOR, P_Q_BOUNDS};
use crate::real::{circular_ls_mean, wrap_angle, wrapped_sq_cost, Real};
use crate::trips::Trip;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Stop once the relative objective change falls below this.
    pub tol: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { max_iter: 50, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmFit<F> {
    pub model: HmmModel<F>,
    /// Objective after every M-step.
    pub trace: Vec<F>,
    /// Final state path of every trip.
    pub paths: Vec<Vec<usize>>,
}

type EdgeCounts = BTreeMap<(usize, usize), usize>;

fn edge_counts(paths: &[Vec<usize>]) -> EdgeCounts {
    let mut counts = EdgeCounts::new();
    for p in paths {
        for w in p.windows(2) {
            *counts.entry((w[0], w[1])).or_default() += 1;
        }
    }
    counts
}

/// Hard-EM objective: complete-data log-likelihood of all trips plus the
/// `(alpha - 1) ln theta` prior terms of every transition in use.
pub fn path_objective<F: Real>(model: &HmmModel<F>, trips: &[Trip<F>], paths: &[Vec<usize>]) -> F {
    let data: F = trips.iter().zip(paths).map(|(t, p)| path_loglik(model, t, p)).sum();
    let prior: F = edge_counts(paths).keys().map(|&(i, j)| (model.hyper.alpha - F::one()) * model.trans_prob(i, j).ln()).sum();
    data + prior
}

fn decode_all<F: Real>(model: &HmmModel<F>, trips: &[Trip<F>]) -> Result<Vec<(Vec<usize>, F)>, HmmError> {
    trips.par_iter().map(|t| viterbi(model, t).map(|d| (d.path, d.log_lik))).collect()
}

/// Hard (Viterbi) EM with a sparse MAP transition update.
///
/// A trip's new Viterbi path replaces its old one only when that raises the
/// objective, which accounts for transitions entering or leaving use. With
/// exact M-steps the objective trace therefore never decreases. States that
/// no trip visits are dropped before each M-step.
pub fn em_fit<F: Real>(model: &HmmModel<F>, trips: &[Trip<F>], cfg: &EmConfig) -> Result<EmFit<F>, HmmError> {
    if trips.is_empty() {
        return Err(HmmError::NoTrips);
    }
    model.validate()?;
    let mut model = model.clone();
    let mut paths: Vec<Vec<usize>> = decode_all(&model, trips)?.into_iter().map(|d| d.0).collect();
    let mut trace: Vec<F> = Vec::new();

    for iter in 0..cfg.max_iter.max(1) {
        let mut changed = iter == 0;
        if iter > 0 {
            let decoded = decode_all(&model, trips)?;
            let old_ll: Vec<F> = trips.par_iter().zip(&paths).map(|(t, p)| path_loglik(&model, t, p)).collect();
            let mut counts = edge_counts(&paths);
            let prior = |i: usize, j: usize| (model.hyper.alpha - F::one()) * model.trans_prob(i, j).ln();
            for (k, (new_path, new_ll)) in decoded.into_iter().enumerate() {
                if new_path == paths[k] {
                    continue;
                }
                let mut delta = new_ll - old_ll[k];
                let mut next = counts.clone();
                for w in paths[k].windows(2) {
                    let c = next.get_mut(&(w[0], w[1])).expect("edge counted");
                    *c -= 1;
                    if *c == 0 {
                        next.remove(&(w[0], w[1]));
                    }
                }
                for w in new_path.windows(2) {
                    *next.entry((w[0], w[1])).or_default() += 1;
                }
                for key in counts.keys().filter(|e| !next.contains_key(e)) {
                    delta -= prior(key.0, key.1);
                }
                for key in next.keys().filter(|e| !counts.contains_key(e)) {
                    delta += prior(key.0, key.1);
                }
                if delta > F::zero() {
                    paths[k] = new_path;
                    counts = next;
                    changed = true;
                }
            }
        }

        prune(&mut model, &mut paths);
        m_step(&mut model, trips, &paths);
        let obj = path_objective(&model, trips, &paths);
        if let Some(&prev) = trace.last() {
            if obj < prev - F::lit(1e-9) * prev.abs() {
                log::warn!("hard-EM objective decreased from {prev} to {obj} at iteration {iter}");
            }
        }
        let rel = trace.last().map(|&prev| ((obj - prev) / prev.abs().max(F::min_positive_value())).abs());
        trace.push(obj);
        log::debug!("em iteration {iter}: objective {obj}, {} states", model.n_states());
        if !changed || rel.is_some_and(|r| r < F::lit(cfg.tol)) {
            break;
        }
    }
    Ok(EmFit { model, trace, paths })
}

/// Drops unvisited states and compacts source, destination, road and record ids.
fn prune<F: Real>(model: &mut HmmModel<F>, paths: &mut [Vec<usize>]) {
    let n = model.n_states();
    let mut occupied = vec![false; n];
    paths.iter().flatten().for_each(|&i| occupied[i] = true);
    if occupied.iter().all(|&o| o) {
        return;
    }
    let kept: Vec<usize> = (0..n).filter(|&i| occupied[i]).collect();
    let compact = |used: Vec<bool>| -> Vec<Option<usize>> {
        let mut next = 0;
        used.into_iter()
            .map(|u| {
                u.then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect()
    };
    let mut src = vec![false; model.n_sources()];
    let mut dst = vec![false; model.n_destinations()];
    let mut road = vec![false; model.n_roads()];
    for &i in &kept {
        match model.states[i] {
            StateKind::Source(s) => src[s] = true,
            StateKind::Destination(d) => dst[d] = true,
            StateKind::Road(r) => road[r] = true,
            StateKind::RoadAug { road: r, source } => {
                road[r] = true;
                src[source] = true;
            }
        }
    }
    let mut rec = vec![false; model.emissions.len()];
    let src_rec: Vec<usize> = (0..src.len()).filter(|&s| src[s]).map(|s| model.source_record[s]).collect();
    let dst_rec: Vec<usize> = (0..dst.len()).filter(|&d| dst[d]).map(|d| model.destination_record[d]).collect();
    let road_rec: Vec<usize> = (0..road.len()).filter(|&r| road[r]).map(|r| model.road_record[r]).collect();
    src_rec.iter().chain(&dst_rec).chain(&road_rec).for_each(|&r| rec[r] = true);
    let (src, dst, road, rec) = (compact(src), compact(dst), compact(road), compact(rec));

    let mut state_map = vec![usize::MAX; n];
    model.states = kept
        .iter()
        .enumerate()
        .map(|(new, &old)| {
            state_map[old] = new;
            match model.states[old] {
                StateKind::Source(s) => StateKind::Source(src[s].unwrap()),
                StateKind::Destination(d) => StateKind::Destination(dst[d].unwrap()),
                StateKind::Road(r) => StateKind::Road(road[r].unwrap()),
                StateKind::RoadAug { road: r, source } => StateKind::RoadAug { road: road[r].unwrap(), source: src[source].unwrap() },
            }
        })
        .collect();
    model.emissions = model.emissions.iter().enumerate().filter(|(k, _)| rec[*k].is_some()).map(|(_, e)| e.clone()).collect();
    model.source_record = src_rec.iter().map(|&r| rec[r].unwrap()).collect();
    model.destination_record = dst_rec.iter().map(|&r| rec[r].unwrap()).collect();
    model.road_record = road_rec.iter().map(|&r| rec[r].unwrap()).collect();
    // rebuilt by the M-step; kept consistent meanwhile
    model.theta0 = kept.iter().map(|&i| model.theta0[i]).collect();
    model.trans =
        kept.iter().map(|&i| model.trans[i].iter().filter(|e| occupied[e.0]).map(|&(j, p)| (state_map[j], p)).collect()).collect();
    paths.iter_mut().flatten().for_each(|i| *i = state_map[*i]);
}

fn m_step<F: Real>(model: &mut HmmModel<F>, trips: &[Trip<F>], paths: &[Vec<usize>]) {
    estimate_emissions(model, trips, paths);
    estimate_transitions(model, paths);
}

/// Maximum-likelihood emission records under the covariance floors, pooled
/// over every state tied to a record.
fn estimate_emissions<F: Real>(model: &mut HmmModel<F>, trips: &[Trip<F>], paths: &[Vec<usize>]) {
    let mut members: Vec<Vec<(usize, usize)>> = vec![Vec::new(); model.emissions.len()];
    for (k, path) in paths.iter().enumerate() {
        for (t, &x) in path.iter().enumerate() {
            members[model.record_of(x)].push((k, t));
        }
    }
    let c_inv = 1.0 / model.hyper.c.f64();
    let mut clamped = 0;
    for (rec, list) in members.iter().enumerate() {
        if list.is_empty() {
            continue;
        }
        let obs: Vec<_> = list.iter().map(|&(k, t)| &trips[k].obs[t]).collect();
        let n = obs.len() as f64;
        let w = |q: bool| if q { c_inv } else { 1.0 };
        let wsum: f64 = obs.iter().map(|o| w(o.q)).sum();
        let mx = obs.iter().map(|o| w(o.q) * o.r[0].f64()).sum::<f64>() / wsum;
        let my = obs.iter().map(|o| w(o.q) * o.r[1].f64()).sum::<f64>() / wsum;
        let (mut a, mut b, mut d) = (0.0, 0.0, 0.0);
        for o in &obs {
            let (dx, dy) = (o.r[0].f64() - mx, o.r[1].f64() - my);
            a += w(o.q) * dx * dx;
            b += w(o.q) * dx * dy;
            d += w(o.q) * dy * dy;
        }
        let (sigma, was_clamped) = clamp_cov(a / n, b / n, d / n, POSITION_FLOOR);

        let headings: Vec<F> = obs.iter().map(|o| o.h).collect();
        let e = &mut model.emissions[rec];
        let (mut loc, mut cost) = circular_ls_mean(&headings, F::TAU());
        let prev_cost = wrapped_sq_cost(&headings, e.mu_h, F::TAU());
        if prev_cost <= cost {
            loc = e.mu_h;
            cost = prev_cost;
        }
        let var_h = cost.f64() / n;
        clamped += usize::from(was_clamped || var_h < HEADING_FLOOR);

        e.mu_r = [F::lit(mx), F::lit(my)];
        e.sigma_r = sigma.map(|row| row.map(F::lit));
        e.mu_h = wrap_angle(loc);
        e.sigma_h = F::lit(var_h.max(HEADING_FLOOR));
        let p = obs.iter().filter(|o| o.q).count() as f64 / n;
        e.p_q = F::lit(p.clamp(P_Q_BOUNDS.0, P_Q_BOUNDS.1));
    }
    if clamped > 0 {
        log::warn!("{clamped} emission records hit the covariance floor");
    }
}

/// Sparse MAP rows `theta_ij ~ max(0, n_ij + alpha - 1)`; rows without counts
/// become self-loops and destinations stay absorbing.
fn estimate_transitions<F: Real>(model: &mut HmmModel<F>, paths: &[Vec<usize>]) {
    let n = model.n_states();
    let counts = edge_counts(paths);
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let alpha = model.hyper.alpha.f64();
    for (&(i, j), &c) in &counts {
        let w = c as f64 + alpha - 1.0;
        if w > 0.0 {
            rows[i].push((j, w));
        }
    }
    model.trans = rows
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            if row.is_empty() || model.states[i].is_destination() {
                return vec![(i, F::one())];
            }
            let total: f64 = row.iter().map(|e| e.1).sum();
            row.into_iter().map(|(j, w)| (j, F::lit(w / total))).collect()
        })
        .collect();
    let mut first = vec![0usize; n];
    paths.iter().for_each(|p| first[p[0]] += 1);
    let total = paths.len() as f64;
    model.theta0 = first.into_iter().map(|c| F::lit(c as f64 / total)).collect();
}

/// Source-augmented copy of a fitted plain model: every road state is
/// replaced by one copy per source, and transitions are re-counted under each
/// trip's decoded source. Emission records are shared, not copied.
pub fn augment_with_source<F: Real>(plain: &HmmModel<F>, trips: &[Trip<F>]) -> Result<HmmModel<F>, HmmError> {
    if plain.is_augmented() {
        return Err(HmmError::Invalid("model is already source-augmented".into()));
    }
    if trips.is_empty() {
        return Err(HmmError::NoTrips);
    }
    let decoded = decode_all(plain, trips)?;
    let ns = plain.n_sources();
    let nd = plain.n_destinations();
    let nr = plain.n_roads();
    let mut states: Vec<StateKind> = (0..ns).map(StateKind::Source).collect();
    states.extend((0..nd).map(StateKind::Destination));
    for s in 0..ns {
        states.extend((0..nr).map(|r| StateKind::RoadAug { road: r, source: s }));
    }
    let index = |kind: StateKind, source: usize| match kind {
        StateKind::Source(s) => s,
        StateKind::Destination(d) => ns + d,
        StateKind::Road(r) => ns + nd + source * nr + r,
        StateKind::RoadAug { .. } => unreachable!("plain model"),
    };
    let paths: Vec<Vec<usize>> = decoded
        .iter()
        .map(|(p, _)| {
            let StateKind::Source(s) = plain.states[p[0]] else { unreachable!("decoded paths start at a source") };
            p.iter().map(|&i| index(plain.states[i], s)).collect()
        })
        .collect();
    let mut model = HmmModel {
        format_version: plain.format_version,
        hyper: plain.hyper,
        states,
        theta0: Vec::new(),
        trans: Vec::new(),
        emissions: plain.emissions.clone(),
        source_record: plain.source_record.clone(),
        destination_record: plain.destination_record.clone(),
        road_record: plain.road_record.clone(),
    };
    estimate_transitions(&mut model, &paths);
    Ok(model)
}
