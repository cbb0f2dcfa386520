//! Synthetic road worlds on a grid and trip sampling with known routes.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Observation, SignalStream, Trip, TripError};
use crate::real::{sample_categorical, sample_dirichlet, wrap_angle, Real};
use crate::stream::seeded;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Position noise standard deviation (m).
    pub pos_std: f64,
    /// Heading noise standard deviation (rad).
    pub heading_std: f64,
    /// Probability that an observation is dead-reckoned.
    pub p_dr: f64,
    /// Multiplier on `pos_std` for dead-reckoned observations.
    pub inflation: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { pos_std: 5.0, heading_std: 0.05, p_dr: 0.05, inflation: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SignalConfig {
    /// Candidate mean speeds (m/s); each node gets one.
    pub speed_classes: Vec<f64>,
    pub speed_std: f64,
    /// Mean trip start hour per source, used cyclically.
    pub start_hours: Vec<f64>,
    pub hour_std: f64,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self { speed_classes: vec![8.0, 15.0, 27.0], speed_std: 1.0, start_hours: vec![8.0, 17.5, 12.0], hour_std: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub rows: usize,
    pub cols: usize,
    /// Distance between neighboring grid nodes (m).
    pub spacing: f64,
    pub n_sources: usize,
    pub n_destinations: usize,
    /// Explicit source nodes; overrides random placement.
    pub source_nodes: Option<Vec<usize>>,
    pub destination_nodes: Option<Vec<usize>>,
    /// Nodes deleted from the grid together with their edges.
    pub removed_nodes: Vec<usize>,
    /// Every route passes through this node when set.
    pub via: Option<usize>,
    /// Source `i` prefers destination `i mod D` with this probability.
    pub dominant_prob: Option<f64>,
    /// Dirichlet concentration of random per-source destination weights.
    pub policy_concentration: f64,
    pub noise: NoiseConfig,
    pub signals: SignalConfig,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            rows: 5,
            cols: 5,
            spacing: 200.0,
            n_sources: 3,
            n_destinations: 5,
            source_nodes: None,
            destination_nodes: None,
            removed_nodes: Vec::new(),
            via: None,
            dominant_prob: None,
            policy_concentration: 0.5,
            noise: NoiseConfig::default(),
            signals: SignalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteChoice {
    /// Node sequence from the source to the destination.
    pub route: Vec<usize>,
    /// Index into [`SyntheticWorld::destinations`].
    pub destination: usize,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub config: WorldConfig,
    pub nodes: Vec<[f64; 2]>,
    /// Directed out-edges per node.
    pub edges: Vec<Vec<usize>>,
    pub sources: Vec<usize>,
    pub destinations: Vec<usize>,
    /// Per source: distribution over (route, destination) pairs.
    pub route_policy: Vec<Vec<RouteChoice>>,
    /// Planted mean speed per node (m/s).
    pub node_speed: Vec<f64>,
    /// Mean trip start hour per source.
    pub source_hour: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripTruth {
    pub id: String,
    pub source: usize,
    /// Destination node.
    pub destination: usize,
    /// Index into the world's destination list.
    pub destination_index: usize,
    pub route: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledTrip {
    pub trip: Trip<f64>,
    pub truth: TripTruth,
}

/// Sidecar file contents for a synthetic trip set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub nodes: Vec<[f64; 2]>,
    pub node_speed: Vec<f64>,
    pub sources: Vec<usize>,
    pub destinations: Vec<usize>,
    pub trips: Vec<TripTruth>,
}

impl GroundTruth {
    pub fn new(world: &SyntheticWorld, sampled: &[SampledTrip]) -> Self {
        Self {
            nodes: world.nodes.clone(),
            node_speed: world.node_speed.clone(),
            sources: world.sources.clone(),
            destinations: world.destinations.clone(),
            trips: sampled.iter().map(|s| s.truth.clone()).collect(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> TripError {
    TripError::Config(msg.into())
}

pub fn generate_world(config: &WorldConfig, seed: u64) -> Result<SyntheticWorld, TripError> {
    let WorldConfig { rows, cols, spacing, .. } = *config;
    if rows < 2 || cols < 2 {
        return Err(config_err("grid must be at least 2x2"));
    }
    if !(spacing > 0.0) {
        return Err(config_err("spacing must be positive"));
    }
    let n = rows * cols;
    let noise = &config.noise;
    if !(0.0..=1.0).contains(&noise.p_dr) || noise.pos_std < 0.0 || noise.heading_std < 0.0 || noise.inflation < 1.0 {
        return Err(config_err("noise parameters out of range"));
    }
    if let Some(p) = config.dominant_prob {
        if !(0.0..=1.0).contains(&p) {
            return Err(config_err("dominant_prob must lie in [0, 1]"));
        }
    }
    if config.signals.speed_classes.is_empty() || config.signals.start_hours.is_empty() {
        return Err(config_err("signal classes must be non-empty"));
    }

    let mut rng = seeded(seed);
    let mut removed = vec![false; n];
    for &r in &config.removed_nodes {
        *removed.get_mut(r).ok_or_else(|| config_err(format!("removed node {r} out of range")))? = true;
    }

    let nodes: Vec<[f64; 2]> = (0..n).map(|i| [(i % cols) as f64 * spacing, (i / cols) as f64 * spacing]).collect();
    let mut edges = vec![Vec::new(); n];
    let mut weights = vec![Vec::new(); n];
    for i in 0..n {
        if removed[i] {
            continue;
        }
        let (r, c) = (i / cols, i % cols);
        let mut nb = Vec::new();
        if r > 0 {
            nb.push(i - cols);
        }
        if c > 0 {
            nb.push(i - 1);
        }
        if c + 1 < cols {
            nb.push(i + 1);
        }
        if r + 1 < rows {
            nb.push(i + cols);
        }
        for j in nb {
            if !removed[j] {
                edges[i].push(j);
                // jitter makes shortest routes unique and seed-dependent
                weights[i].push(1.0 + 1e-3 * rng.random::<f64>());
            }
        }
    }

    let available: Vec<usize> = (0..n).filter(|&i| !removed[i]).collect();
    let mut pool = available.clone();
    pool.shuffle(&mut rng);
    let pick = |explicit: &Option<Vec<usize>>, count: usize, pool: &mut Vec<usize>| -> Result<Vec<usize>, TripError> {
        match explicit {
            Some(list) => {
                if list.is_empty() || list.iter().any(|&v| v >= n) {
                    return Err(config_err("explicit site list empty or out of range"));
                }
                Ok(list.clone())
            }
            None => {
                if count == 0 || count > pool.len() {
                    return Err(config_err("not enough nodes for requested sources/destinations"));
                }
                Ok(pool.drain(..count).collect())
            }
        }
    };
    let sources = pick(&config.source_nodes, config.n_sources, &mut pool)?;
    let destinations = pick(&config.destination_nodes, config.n_destinations, &mut pool)?;
    if let Some(v) = config.via {
        if v >= n || removed[v] {
            return Err(config_err("via node missing from the grid"));
        }
    }

    let mut route_policy = Vec::with_capacity(sources.len());
    for (si, &s) in sources.iter().enumerate() {
        let mut choices = Vec::new();
        for (di, &d) in destinations.iter().enumerate() {
            if d == s {
                continue;
            }
            let route = match config.via {
                Some(v) if v != s && v != d => {
                    let first =
                        shortest_path(&edges, &weights, s, v, &[]).ok_or(TripError::Unreachable { source_node: s, destination: d })?;
                    let second = shortest_path(&edges, &weights, v, d, &first[..first.len() - 1])
                        .or_else(|| shortest_path(&edges, &weights, v, d, &[]))
                        .ok_or(TripError::Unreachable { source_node: s, destination: d })?;
                    first.into_iter().chain(second.into_iter().skip(1)).collect()
                }
                _ => shortest_path(&edges, &weights, s, d, &[]).ok_or(TripError::Unreachable { source_node: s, destination: d })?,
            };
            choices.push(RouteChoice { route, destination: di, prob: 0.0 });
        }
        if choices.is_empty() {
            return Err(config_err(format!("source node {s} has no distinct destination")));
        }
        let probs: Vec<f64> = match config.dominant_prob {
            Some(p) if choices.len() > 1 => {
                let favorite = si % destinations.len();
                let fav_pos = choices.iter().position(|c| c.destination == favorite).unwrap_or(0);
                let rest = (1.0 - p) / (choices.len() - 1) as f64;
                (0..choices.len()).map(|i| if i == fav_pos { p } else { rest }).collect()
            }
            _ => sample_dirichlet(&vec![config.policy_concentration.max(1e-3); choices.len()], &mut rng),
        };
        let total: f64 = probs.iter().sum();
        for (c, p) in choices.iter_mut().zip(&probs) {
            c.prob = p / total;
        }
        route_policy.push(choices);
    }

    let classes = &config.signals.speed_classes;
    let node_speed = (0..n).map(|_| classes[rng.random_range(0..classes.len())]).collect();
    let hours = &config.signals.start_hours;
    let source_hour = (0..sources.len()).map(|i| hours[i % hours.len()]).collect();

    Ok(SyntheticWorld { config: config.clone(), nodes, edges, sources, destinations, route_policy, node_speed, source_hour })
}

#[derive(PartialEq)]
struct Frontier(f64, usize);

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn shortest_path(edges: &[Vec<usize>], weights: &[Vec<f64>], from: usize, to: usize, blocked: &[usize]) -> Option<Vec<usize>> {
    let n = edges.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    dist[from] = 0.0;
    heap.push(Frontier(0.0, from));
    while let Some(Frontier(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        if u == to {
            break;
        }
        for (&v, &w) in edges[u].iter().zip(&weights[u]) {
            if blocked.contains(&v) {
                continue;
            }
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                prev[v] = u;
                heap.push(Frontier(nd, v));
            }
        }
    }
    if !dist[to].is_finite() {
        return None;
    }
    let mut path = vec![to];
    while *path.last().unwrap() != from {
        path.push(prev[*path.last().unwrap()]);
    }
    path.reverse();
    Some(path)
}

/// Samples `n` trips. Each trip has one observation per route node.
pub fn sample_trips(world: &SyntheticWorld, n: usize, seed: u64) -> Result<Vec<SampledTrip>, TripError> {
    if n == 0 {
        return Err(config_err("trip count must be at least 1"));
    }
    let mut rng = seeded(seed);
    let noise = &world.config.noise;
    let sig = &world.config.signals;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let si = rng.random_range(0..world.sources.len());
        let weights: Vec<f64> = world.route_policy[si].iter().map(|c| c.prob).collect();
        let choice = &world.route_policy[si][sample_categorical(&weights, &mut rng)];
        let route = &choice.route;
        let start_hour = world.source_hour[si] + sig.hour_std * f64::sample_std_normal(&mut rng);
        let last = route.len() - 1;

        let mut obs = Vec::with_capacity(route.len());
        let mut velocity = Vec::with_capacity(route.len());
        let mut hour = Vec::with_capacity(route.len());
        let mut t = 0.0;
        for (k, &node) in route.iter().enumerate() {
            let p = world.nodes[node];
            if k > 0 {
                let q = world.nodes[route[k - 1]];
                let dist = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
                t += dist / world.node_speed[node].max(1.0);
            }
            let (a, b) = if k < last { (node, route[k + 1]) } else { (route[k - 1], node) };
            let (pa, pb) = (world.nodes[a], world.nodes[b]);
            let heading = (pb[1] - pa[1]).atan2(pb[0] - pa[0]);

            let dr = rng.random::<f64>() < noise.p_dr;
            let std = noise.pos_std * if dr { noise.inflation } else { 1.0 };
            let r = [p[0] + std * f64::sample_std_normal(&mut rng), p[1] + std * f64::sample_std_normal(&mut rng)];
            let h = wrap_angle(heading + noise.heading_std * f64::sample_std_normal(&mut rng));
            obs.push(Observation { t, r, h, q: dr, k_on: k == 0, k_off: k == last });

            let v = world.node_speed[node] + sig.speed_std * f64::sample_std_normal(&mut rng);
            velocity.push(v.max(0.0));
            hour.push((start_hour + t / 3600.0).rem_euclid(24.0));
        }
        let id = format!("trip{i:05}");
        let trip = Trip::new(id.clone(), obs)?.with_signals(SignalStream { velocity, hour })?;
        out.push(SampledTrip {
            trip,
            truth: TripTruth {
                id,
                source: world.sources[si],
                destination: world.destinations[choice.destination],
                destination_index: choice.destination,
                route: route.clone(),
            },
        });
    }
    Ok(out)
}
