//! Route and destination prediction on a fitted trip HMM.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hmm::{prefix_states, HmmError, HmmModel};
use crate::real::Real;
use crate::trips::Trip;

/// Gauss-Seidel stopping threshold on the largest update.
pub const ABSORPTION_TOL: f64 = 1e-10;
pub const MAX_SWEEPS: usize = 100_000;

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("state {0} does not exist")]
    NoState(usize),
    #[error("start and goal are the same state")]
    SameState,
    #[error("state {to} is unreachable from state {from}")]
    Unreachable { from: usize, to: usize },
    #[error("model has no destination states")]
    NoDestinations,
    #[error("absorption iteration did not converge in {0} sweeps")]
    NotConverged(usize),
    #[error(transparent)]
    Hmm(#[from] HmmError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutePrediction<F> {
    pub path: Vec<usize>,
    /// Sum of log transition probabilities along the path.
    pub log_prob: F,
}

#[derive(Clone, Copy, PartialEq)]
struct Label(f64, usize);

impl Eq for Label {}

impl Ord for Label {
    // min-heap on cost, then on state index
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Most probable state path from `a` to `b`: Dijkstra with edge weights
/// `-ln theta_ij`.
pub fn most_likely_route<F: Real>(model: &HmmModel<F>, a: usize, b: usize) -> Result<RoutePrediction<F>, PredictError> {
    let n = model.n_states();
    for s in [a, b] {
        if s >= n {
            return Err(PredictError::NoState(s));
        }
    }
    if a == b {
        return Err(PredictError::SameState);
    }
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[a] = 0.0;
    heap.push(Label(0.0, a));
    while let Some(Label(d, i)) = heap.pop() {
        if done[i] {
            continue;
        }
        done[i] = true;
        if i == b {
            break;
        }
        for &(j, p) in &model.trans[i] {
            let w = -p.f64().ln();
            assert!(w >= 0.0, "transition probability above one");
            let nd = d + w;
            if nd < dist[j] {
                dist[j] = nd;
                prev[j] = i;
                heap.push(Label(nd, j));
            }
        }
    }
    if !done[b] {
        return Err(PredictError::Unreachable { from: a, to: b });
    }
    let mut path = vec![b];
    while *path.last().unwrap() != a {
        path.push(prev[*path.last().unwrap()]);
    }
    path.reverse();
    let log_prob = path.windows(2).map(|w| model.trans_prob(w[0], w[1]).ln()).sum();
    Ok(RoutePrediction { path, log_prob })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionTable<F> {
    /// Destination state indices, in destination order.
    pub destinations: Vec<usize>,
    /// `a[i][j]`: probability that a chain started at state `i` ends in destination `j`.
    pub a: Vec<Vec<F>>,
    /// Probability mass that is never absorbed.
    pub residual: Vec<F>,
}

impl<F: Real> AbsorptionTable<F> {
    /// Distribution over destinations followed by the residual.
    pub fn row(&self, state: usize) -> (&[F], F) {
        (&self.a[state], self.residual[state])
    }
}

/// Absorption probabilities `a_ij = theta_ij + sum_k theta_ik a_kj` over
/// transient `k`, solved by Gauss-Seidel for all destinations at once.
pub fn absorption_table<F: Real>(model: &HmmModel<F>) -> Result<AbsorptionTable<F>, PredictError> {
    let n = model.n_states();
    let dests = model.destination_states();
    if dests.is_empty() {
        return Err(PredictError::NoDestinations);
    }
    let nd = dests.len();
    let mut col = vec![usize::MAX; n];
    for (j, &d) in dests.iter().enumerate() {
        col[d] = j;
    }
    let mut a = vec![vec![0.0f64; nd]; n];
    for (j, &d) in dests.iter().enumerate() {
        a[d][j] = 1.0;
    }
    let transient: Vec<usize> = (0..n).filter(|&i| col[i] == usize::MAX).collect();
    let mut row = vec![0.0; nd];
    let mut converged = transient.is_empty();
    let mut sweeps = 0;
    while !converged {
        if sweeps == MAX_SWEEPS {
            return Err(PredictError::NotConverged(MAX_SWEEPS));
        }
        sweeps += 1;
        let mut change: f64 = 0.0;
        for &i in &transient {
            row.iter_mut().for_each(|x| *x = 0.0);
            let mut stay = 0.0;
            for &(k, p) in &model.trans[i] {
                let p = p.f64();
                if k == i {
                    stay = p;
                } else if col[k] != usize::MAX {
                    row[col[k]] += p;
                } else {
                    for (r, ak) in row.iter_mut().zip(&a[k]) {
                        *r += p * ak;
                    }
                }
            }
            let scale = if stay < 1.0 { 1.0 / (1.0 - stay) } else { 0.0 };
            for (old, r) in a[i].iter_mut().zip(&row) {
                let v = r * scale;
                change = change.max((v - *old).abs());
                *old = v;
            }
        }
        converged = change < ABSORPTION_TOL;
    }
    let residual = a.iter().map(|r| F::lit((1.0 - r.iter().sum::<f64>()).max(0.0))).collect();
    let a = a.into_iter().map(|r| r.into_iter().map(|x| F::lit(x.clamp(0.0, 1.0))).collect()).collect();
    Ok(AbsorptionTable { destinations: dests, a, residual })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DestinationTrack<F> {
    /// Decoded current state after each observation.
    pub states: Vec<usize>,
    /// Destination distribution after each observation.
    pub probs: Vec<Vec<F>>,
    pub residual: Vec<F>,
}

impl<F: Real> DestinationTrack<F> {
    /// Most likely destination at step `t`; ties go to the lowest index.
    pub fn best(&self, t: usize) -> usize {
        argmax_first(&self.probs[t])
    }
}

fn argmax_first<F: Real>(v: &[F]) -> usize {
    let mut best = 0;
    for (j, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = j;
        }
    }
    best
}

/// Destination distribution after every observation of a (partial) trip,
/// read from the absorption row of the prefix's decoded current state.
pub fn track_destinations<F: Real>(
    model: &HmmModel<F>,
    table: &AbsorptionTable<F>,
    trip: &Trip<F>,
) -> Result<DestinationTrack<F>, PredictError> {
    let states = prefix_states(model, trip)?;
    let probs = states.iter().map(|&i| table.a[i].clone()).collect();
    let residual = states.iter().map(|&i| table.residual[i]).collect();
    Ok(DestinationTrack { states, probs, residual })
}

/// Most likely destination of every road state. `None` when no destination is
/// reachable at all.
pub fn most_likely_destination_per_road<F: Real>(model: &HmmModel<F>, table: &AbsorptionTable<F>) -> Vec<(usize, Option<usize>)> {
    (0..model.n_states())
        .filter(|&i| model.states[i].road().is_some())
        .map(|i| {
            let row = &table.a[i];
            let best = argmax_first(row);
            (i, (row[best] > F::zero()).then_some(best))
        })
        .collect()
}

/// Observation index standing for "after a fraction of the trip".
pub fn fraction_index(len: usize, fraction: f64) -> usize {
    if len < 2 {
        return 0;
    }
    let t = (fraction * (len - 1) as f64).ceil() as usize;
    t.clamp(1, len - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::{EmissionParams, HmmHyper, StateKind, FORMAT_VERSION};
    use crate::stream::seeded;
    use rand::Rng;

    pub(crate) fn model(states: Vec<StateKind>, trans: Vec<Vec<(usize, f64)>>) -> HmmModel<f64> {
        let n = states.len();
        let e = EmissionParams::isotropic([0.0, 0.0], 25.0, 0.0, 0.1, 0.1);
        let ns = states.iter().filter(|s| matches!(s, StateKind::Source(_))).count();
        let nd = states.iter().filter(|s| s.is_destination()).count();
        let nr = n - ns - nd;
        let mut theta0 = vec![0.0; n];
        (0..ns).for_each(|i| theta0[i] = 1.0 / ns as f64);
        HmmModel {
            format_version: FORMAT_VERSION,
            hyper: HmmHyper::default(),
            states,
            theta0,
            trans,
            emissions: vec![e],
            source_record: vec![0; ns],
            destination_record: vec![0; nd],
            road_record: vec![0; nr],
        }
    }

    /// Random model: one source, `nd` destinations, roads with sparse rows.
    fn random(n: usize, nd: usize, density: f64, rng: &mut impl Rng) -> HmmModel<f64> {
        let mut states = vec![StateKind::Source(0)];
        states.extend((0..nd).map(StateKind::Destination));
        states.extend((0..n - 1 - nd).map(StateKind::Road));
        let trans = (0..n)
            .map(|i| {
                if (1..=nd).contains(&i) {
                    return vec![(i, 1.0)];
                }
                let mut row = Vec::new();
                for j in 1..n {
                    if rng.random::<f64>() < density {
                        row.push((j, rng.random::<f64>() + 0.01));
                    }
                }
                if row.is_empty() {
                    row.push((i, 1.0));
                }
                let s: f64 = row.iter().map(|e| e.1).sum();
                row.into_iter().map(|(j, p)| (j, p / s)).collect()
            })
            .collect();
        model(states, trans)
    }

    fn chain() -> HmmModel<f64> {
        model(
            vec![StateKind::Source(0), StateKind::Destination(0), StateKind::Road(0)],
            vec![vec![(2, 1.0)], vec![(1, 1.0)], vec![(1, 1.0)]],
        )
    }

    #[test]
    fn direct_edge_beats_two_hops() {
        let m = model(
            vec![StateKind::Source(0), StateKind::Destination(0), StateKind::Road(0)],
            vec![vec![(1, 0.9), (2, 0.1)], vec![(1, 1.0)], vec![(1, 0.5), (2, 0.5)]],
        );
        let r = most_likely_route(&m, 0, 1).unwrap();
        assert_eq!(r.path, vec![0, 1]);
        assert!((r.log_prob - 0.9f64.ln()).abs() < 1e-12);
        assert!(matches!(most_likely_route(&m, 1, 0), Err(PredictError::Unreachable { .. })));
        assert!(matches!(most_likely_route(&m, 0, 0), Err(PredictError::SameState)));
    }

    #[test]
    fn chain_route_and_absorption() {
        let m = chain();
        let r = most_likely_route(&m, 0, 1).unwrap();
        assert_eq!(r.path, vec![0, 2, 1]);
        assert_eq!(r.log_prob, 0.0);
        let t = absorption_table(&m).unwrap();
        assert_eq!(t.a[2], vec![1.0]);
        assert_eq!(t.a[1], vec![1.0]);
    }

    #[test]
    fn one_step_absorption() {
        let m = model(
            vec![StateKind::Source(0), StateKind::Destination(0), StateKind::Destination(1), StateKind::Road(0)],
            vec![vec![(3, 1.0)], vec![(1, 1.0)], vec![(2, 1.0)], vec![(1, 0.3), (2, 0.7)]],
        );
        let t = absorption_table(&m).unwrap();
        assert!((t.a[3][0] - 0.3).abs() < 1e-12);
        assert!((t.a[3][1] - 0.7).abs() < 1e-12);
        assert_eq!(t.a[2], vec![0.0, 1.0]);
        let per_road = most_likely_destination_per_road(&m, &t);
        assert_eq!(per_road, vec![(3, Some(1))]);
    }

    #[test]
    fn trapped_mass_goes_to_residual() {
        let m = model(
            vec![StateKind::Source(0), StateKind::Destination(0), StateKind::Road(0), StateKind::Road(1)],
            vec![vec![(2, 1.0)], vec![(1, 1.0)], vec![(1, 0.25), (3, 0.75)], vec![(3, 1.0)]],
        );
        let t = absorption_table(&m).unwrap();
        assert!((t.a[2][0] - 0.25).abs() < 1e-12);
        assert!((t.residual[2] - 0.75).abs() < 1e-12);
        assert_eq!(t.residual[3], 1.0);
    }

    fn rollout(m: &HmmModel<f64>, start: usize, rng: &mut impl Rng) -> Option<usize> {
        let mut i = start;
        for _ in 0..10_000 {
            if m.states[i].is_destination() {
                return Some(i);
            }
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let row = &m.trans[i];
            i = row.last().unwrap().0;
            for &(j, p) in row {
                acc += p;
                if u < acc {
                    i = j;
                    break;
                }
            }
        }
        None
    }

    #[test]
    fn absorption_matches_rollouts() {
        let mut rng = seeded(3);
        let m = random(12, 3, 0.3, &mut rng);
        let t = absorption_table(&m).unwrap();
        for i in 0..m.n_states() {
            let s: f64 = t.a[i].iter().sum::<f64>() + t.residual[i];
            assert!((s - 1.0).abs() < 1e-8);
        }
        let start = 0;
        let mut hits = [0usize; 3];
        let n = 20_000;
        for _ in 0..n {
            if let Some(d) = rollout(&m, start, &mut rng) {
                hits[d - 1] += 1;
            }
        }
        for j in 0..3 {
            assert!((hits[j] as f64 / n as f64 - t.a[start][j]).abs() < 0.02);
        }
    }

    fn best_simple_path(m: &HmmModel<f64>, a: usize, b: usize) -> Option<(Vec<usize>, f64)> {
        fn go(
            m: &HmmModel<f64>,
            i: usize,
            b: usize,
            seen: &mut Vec<bool>,
            path: &mut Vec<usize>,
            lp: f64,
            best: &mut Option<(Vec<usize>, f64)>,
        ) {
            if i == b {
                if best.as_ref().is_none_or(|x| lp > x.1) {
                    *best = Some((path.clone(), lp));
                }
                return;
            }
            for &(j, p) in &m.trans[i] {
                if !seen[j] {
                    seen[j] = true;
                    path.push(j);
                    go(m, j, b, seen, path, lp + p.ln(), best);
                    path.pop();
                    seen[j] = false;
                }
            }
        }
        let mut seen = vec![false; m.n_states()];
        seen[a] = true;
        let mut best = None;
        go(m, a, b, &mut seen, &mut vec![a], 0.0, &mut best);
        best
    }

    #[test]
    fn routes_match_enumeration() {
        let mut rng = seeded(5);
        for _ in 0..40 {
            let m = random(8, 2, 0.35, &mut rng);
            let oracle = best_simple_path(&m, 0, 1);
            match (most_likely_route(&m, 0, 1), oracle) {
                (Ok(r), Some((p, lp))) => {
                    assert_eq!(r.path, p);
                    assert!((r.log_prob - lp).abs() < 1e-9);
                }
                (Err(PredictError::Unreachable { .. }), None) => {}
                (got, want) => panic!("{got:?} vs {want:?}"),
            }
        }
    }

    #[test]
    fn fraction_index_bounds() {
        assert_eq!(fraction_index(1, 0.1), 0);
        assert_eq!(fraction_index(2, 0.1), 1);
        assert_eq!(fraction_index(11, 0.1), 1);
        assert_eq!(fraction_index(12, 0.1), 2);
        assert_eq!(fraction_index(5, 1.0), 4);
    }

    #[test]
    fn tracking_ends_on_the_decoded_destination() {
        use crate::hmm::{em_fit, init_model, EmConfig, InitConfig};
        use crate::trips::{generate_world, sample_trips, WorldConfig};
        let world = generate_world(&WorldConfig::default(), 4).unwrap();
        let sampled = sample_trips(&world, 80, 5).unwrap();
        let trips: Vec<_> = sampled.iter().map(|s| s.trip.clone()).collect();
        let m0 = init_model(&trips, &InitConfig::default(), HmmHyper::default()).unwrap();
        let fit = em_fit(&m0, &trips, &EmConfig::default()).unwrap();
        let table = absorption_table(&fit.model).unwrap();
        for (k, s) in sampled.iter().enumerate().take(20) {
            let track = track_destinations(&fit.model, &table, &s.trip).unwrap();
            let last = track.probs.len() - 1;
            let StateKind::Destination(d) = fit.model.states[track.states[last]] else {
                panic!("trip {k} does not end at a destination");
            };
            assert!(track.probs[last][d] >= 0.99);
            // learned destination sits on the true destination node
            let mu = fit.model.emission(track.states[last]).mu_r;
            let node = world.nodes[s.truth.destination];
            assert!(((mu[0] - node[0]).powi(2) + (mu[1] - node[1]).powi(2)).sqrt() < 20.0);
        }
    }
}
