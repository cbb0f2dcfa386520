//! DP-means clustering and the joint (velocity, time-of-day) word vocabulary.
//!
//! DP-means is k-means with a penalty: a point whose squared distance to every
//! center exceeds `lambda^2` opens a new cluster. Dimensions listed in
//! `circular_dims` live on a circle of circumference [`CIRCULAR_PERIOD`]
//! (hours of the day).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::real::{circular_ls_mean, wrap_period, Real};

/// Period of circular dimensions (hours per day).
pub const CIRCULAR_PERIOD: f64 = 24.0;

#[derive(Debug, Error, PartialEq)]
pub enum QuantizeError {
    #[error("cannot cluster an empty dataset")]
    Empty,
    #[error("lambda must be positive and finite")]
    BadLambda,
    #[error("point has dimension {got}, codebook expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("word id {flat} outside vocabulary of size {size}")]
    UnknownWord { flat: usize, size: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook<F> {
    pub lambda: F,
    pub centers: Vec<Vec<F>>,
    #[serde(default)]
    pub circular_dims: Vec<usize>,
}

impl<F: Real> Codebook<F> {
    pub fn dim(&self) -> usize {
        self.centers.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Squared distance honoring circular dimensions.
    pub fn sq_dist(&self, a: &[F], b: &[F]) -> F {
        sq_dist(a, b, &self.circular_dims)
    }

    /// Index of the nearest center; ties go to the lowest index.
    pub fn assign(&self, point: &[F]) -> Result<usize, QuantizeError> {
        if point.len() != self.dim() {
            return Err(QuantizeError::DimensionMismatch { expected: self.dim(), got: point.len() });
        }
        Ok(nearest(&self.centers, point, &self.circular_dims).0)
    }
}

fn sq_dist<F: Real>(a: &[F], b: &[F], circular: &[usize]) -> F {
    let period = F::lit(CIRCULAR_PERIOD);
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(d, (x, y))| {
            let diff = if circular.contains(&d) { wrap_period(*x - *y, period) } else { *x - *y };
            diff * diff
        })
        .sum()
}

fn nearest<F: Real>(centers: &[Vec<F>], point: &[F], circular: &[usize]) -> (usize, F) {
    let mut best = (0, F::infinity());
    for (k, c) in centers.iter().enumerate() {
        let d = sq_dist(c, point, circular);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// Result of a DP-means run.
#[derive(Debug, Clone, PartialEq)]
pub struct DpMeans<F> {
    pub codebook: Codebook<F>,
    /// Cluster index of every input point.
    pub labels: Vec<usize>,
    /// Objective after initialization and after every sweep.
    pub trace: Vec<F>,
}

pub fn dp_means<F: Real>(points: &[Vec<F>], lambda: F, max_iter: usize) -> Result<DpMeans<F>, QuantizeError> {
    dp_means_with(points, lambda, max_iter, &[])
}

/// DP-means from a single cluster at the global mean, visiting points in
/// input order. Empty clusters are deleted after every sweep.
pub fn dp_means_with<F: Real>(points: &[Vec<F>], lambda: F, max_iter: usize, circular_dims: &[usize]) -> Result<DpMeans<F>, QuantizeError> {
    let first = points.first().ok_or(QuantizeError::Empty)?;
    if !(lambda > F::zero()) || !lambda.is_finite() {
        return Err(QuantizeError::BadLambda);
    }
    let dim = first.len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(QuantizeError::DimensionMismatch { expected: dim, got: p.len() });
    }
    let lambda2 = lambda * lambda;
    let mut labels = vec![0usize; points.len()];
    let mut centers = vec![cluster_mean(points, &labels, 0, dim, circular_dims, None)];
    let objective = |centers: &[Vec<F>], labels: &[usize]| -> F {
        let fit: F = points.iter().zip(labels).map(|(p, &l)| sq_dist(p, &centers[l], circular_dims)).sum();
        fit + lambda2 * F::from_count(centers.len())
    };
    let mut trace = vec![objective(&centers, &labels)];

    for _ in 0..max_iter {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (k, d) = nearest(&centers, p, circular_dims);
            let target = if d > lambda2 {
                centers.push(p.clone());
                centers.len() - 1
            } else {
                k
            };
            if target != labels[i] {
                labels[i] = target;
                changed = true;
            }
        }

        // drop empty clusters, then move centers to their means
        let mut used = vec![false; centers.len()];
        labels.iter().for_each(|&l| used[l] = true);
        let mut remap = vec![usize::MAX; centers.len()];
        let mut kept = Vec::new();
        for (k, c) in centers.into_iter().enumerate() {
            if used[k] {
                remap[k] = kept.len();
                kept.push(c);
            }
        }
        labels.iter_mut().for_each(|l| *l = remap[*l]);
        centers = kept.iter().enumerate().map(|(k, old)| cluster_mean(points, &labels, k, dim, circular_dims, Some(old))).collect();

        let obj = objective(&centers, &labels);
        let prev = *trace.last().unwrap();
        assert!(obj <= prev + F::lit(1e-9) * (F::one() + prev.abs()), "DP-means objective increased from {prev} to {obj}");
        trace.push(obj);
        if !changed {
            break;
        }
    }

    Ok(DpMeans { codebook: Codebook { lambda, centers, circular_dims: circular_dims.to_vec() }, labels, trace })
}

fn cluster_mean<F: Real>(
    points: &[Vec<F>],
    labels: &[usize],
    k: usize,
    dim: usize,
    circular: &[usize],
    previous: Option<&Vec<F>>,
) -> Vec<F> {
    let members: Vec<&Vec<F>> = points.iter().zip(labels).filter(|(_, &l)| l == k).map(|(p, _)| p).collect();
    let period = F::lit(CIRCULAR_PERIOD);
    (0..dim)
        .map(|d| {
            let vals: Vec<F> = members.iter().map(|p| p[d]).collect();
            if circular.contains(&d) {
                let (loc, cost) = circular_ls_mean(&vals, period);
                match previous {
                    Some(prev) if crate::real::wrapped_sq_cost(&vals, prev[d], period) <= cost => prev[d],
                    _ => loc,
                }
            } else {
                vals.iter().copied().sum::<F>() / F::from_count(vals.len())
            }
        })
        .collect()
}

/// One quantized (velocity, time-of-day) word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WordId {
    pub v_bin: usize,
    pub t_bin: usize,
    /// `v_bin * T + t_bin`.
    pub flat: usize,
}

/// Product vocabulary of per-signal codebooks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary<F> {
    pub velocity: Codebook<F>,
    pub time: Codebook<F>,
}

impl<F: Real> Vocabulary<F> {
    pub fn v_count(&self) -> usize {
        self.velocity.len()
    }

    pub fn t_count(&self) -> usize {
        self.time.len()
    }

    pub fn size(&self) -> usize {
        self.v_count() * self.t_count()
    }

    pub fn encode(&self, velocity: F, hour: F) -> WordId {
        let v_bin = self.velocity.assign(&[velocity]).expect("velocity codebook is 1-D");
        let t_bin = self.time.assign(&[hour]).expect("time codebook is 1-D");
        WordId { v_bin, t_bin, flat: v_bin * self.t_count() + t_bin }
    }

    pub fn decode(&self, flat: usize) -> Result<WordId, QuantizeError> {
        decode_word(flat, self.v_count(), self.t_count())
    }
}

pub fn decode_word(flat: usize, v_count: usize, t_count: usize) -> Result<WordId, QuantizeError> {
    let size = v_count * t_count;
    if flat >= size {
        return Err(QuantizeError::UnknownWord { flat, size });
    }
    Ok(WordId { v_bin: flat / t_count, t_bin: flat % t_count, flat })
}

/// Clusters velocities (m/s) on the line and hours of day on the circle.
pub fn build_vocab<F: Real>(
    velocities: &[F],
    hours: &[F],
    lambda_v: F,
    lambda_t: F,
    max_iter: usize,
) -> Result<(Vocabulary<F>, usize), QuantizeError> {
    if velocities.is_empty() || hours.is_empty() {
        return Err(QuantizeError::Empty);
    }
    let vs: Vec<Vec<F>> = velocities.iter().map(|&v| vec![v]).collect();
    let ts: Vec<Vec<F>> = hours.iter().map(|&h| vec![h.rem_euclid(F::lit(CIRCULAR_PERIOD))]).collect();
    let velocity = dp_means(&vs, lambda_v, max_iter)?.codebook;
    let time = dp_means_with(&ts, lambda_t, max_iter, &[0])?.codebook;
    let vocab = Vocabulary { velocity, time };
    let size = vocab.size();
    Ok((vocab, size))
}

trait RemEuclid {
    fn rem_euclid(self, p: Self) -> Self;
}

impl<F: Real> RemEuclid for F {
    fn rem_euclid(self, p: F) -> F {
        let r = self % p;
        if r < F::zero() {
            r + p
        } else {
            r
        }
    }
}
