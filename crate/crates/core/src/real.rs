//! Scalar abstraction shared by every numeric module.
//!
//! All models are generic over [`Real`], which is implemented for `f32` and
//! `f64`. Random draws and special functions are evaluated in `f64` and cast
//! back, so single precision only affects storage and arithmetic.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Converts an `f64` literal. Never fails for `f32`/`f64`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal must be representable")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::lit(n as f64)
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn ln_gamma(self) -> Self {
        Self::lit(statrs::function::gamma::ln_gamma(self.f64()))
    }

    fn sample_std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let x: f64 = StandardNormal.sample(rng);
        Self::lit(x)
    }

    /// Uniform draw on the open interval (0, 1).
    fn sample_open01<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::lit(open01(rng))
    }

    /// Log of a Gamma(shape, 1) draw, stable for tiny shapes.
    fn sample_ln_gamma<R: Rng + ?Sized>(shape: Self, rng: &mut R) -> Self {
        Self::lit(ln_gamma_draw(shape.f64(), rng))
    }
}

impl<T> Real for T where
    T: Float
        + FloatConst
        + FromPrimitive
        + ToPrimitive
        + NumAssign
        + Sum
        + Default
        + Debug
        + Display
        + Send
        + Sync
        + Serialize
        + DeserializeOwned
        + 'static
{
}

fn open01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// `ln G` with `G ~ Gamma(shape, 1)`. Shapes below one use
/// `G(a) = G(a + 1) * U^(1/a)` in log space, which never underflows.
pub(crate) fn ln_gamma_draw<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    assert!(shape > 0.0 && shape.is_finite(), "gamma shape must be positive, got {shape}");
    if shape < 1.0 {
        let g = Gamma::new(shape + 1.0, 1.0).expect("valid gamma").sample(rng);
        g.ln() + open01(rng).ln() / shape
    } else {
        let g: f64 = Gamma::new(shape, 1.0).expect("valid gamma").sample(rng);
        g.max(f64::MIN_POSITIVE).ln()
    }
}

/// Draws from a Dirichlet distribution. Parameters must be positive; values
/// that underflowed to zero are treated as the smallest positive `f64`.
pub fn sample_dirichlet<F: Real, R: Rng + ?Sized>(params: &[F], rng: &mut R) -> Vec<F> {
    let logs: Vec<f64> = params.iter().map(|a| ln_gamma_draw(a.f64().max(f64::MIN_POSITIVE), rng)).collect();
    normalize_log(&logs).into_iter().map(F::lit).collect()
}

/// Two-component Dirichlet (Beta) draw returned as a pair.
pub fn sample_beta_pair<F: Real, R: Rng + ?Sized>(a: F, b: F, rng: &mut R) -> [F; 2] {
    let p = sample_dirichlet(&[a, b], rng);
    [p[0], p[1]]
}

/// Exponentiates and normalizes log weights.
pub fn normalize_log(logs: &[f64]) -> Vec<f64> {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        let n = logs.len().max(1) as f64;
        return vec![1.0 / n; logs.len()];
    }
    let mut out: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= s);
    out
}

pub fn log_sum_exp(logs: &[f64]) -> f64 {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

/// Samples an index proportionally to non-negative weights. Falls back to
/// index 0 when every weight is zero.
pub fn sample_categorical<F: Real, R: Rng + ?Sized>(weights: &[F], rng: &mut R) -> usize {
    let total: F = weights.iter().copied().sum();
    if !(total > F::zero()) {
        return 0;
    }
    let target = F::lit(rng.random::<f64>()) * total;
    let mut acc = F::zero();
    for (i, w) in weights.iter().enumerate() {
        acc += *w;
        if target < acc {
            return i;
        }
    }
    weights.iter().rposition(|w| *w > F::zero()).unwrap_or(0)
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle<F: Real>(a: F) -> F {
    wrap_period(a, F::TAU())
}

/// Wraps a value to (-period/2, period/2].
pub fn wrap_period<F: Real>(a: F, period: F) -> F {
    let half = period / F::lit(2.0);
    let mut r = a - period * (a / period).round();
    if r <= -half {
        r += period;
    } else if r > half {
        r -= period;
    }
    r
}

/// Location on a circle of circumference `period` minimizing the sum of
/// squared wrapped residuals. Exact: the optimum cuts the circle at a gap
/// between sorted samples, so every cut is tried with running sums.
///
/// Returns the location in `[0, period)` and the attained cost.
pub fn circular_ls_mean<F: Real>(values: &[F], period: F) -> (F, F) {
    assert!(!values.is_empty());
    let p = period.f64();
    let mut xs: Vec<f64> = values.iter().map(|v| v.f64().rem_euclid(p)).collect();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    let sum: f64 = xs.iter().sum();
    let sum_sq: f64 = xs.iter().map(|x| x * x).sum();

    let mut best = (f64::INFINITY, 0.0);
    let mut lifted = 0.0;
    let mut lifted_sq = 0.0;
    for k in 0..xs.len() {
        // first k samples lifted by one period
        let s = sum + lifted;
        let s2 = sum_sq + lifted_sq;
        let mean = s / n;
        let cost = (s2 - n * mean * mean).max(0.0);
        if cost < best.0 {
            best = (cost, mean);
        }
        let x = xs[k];
        lifted += p;
        lifted_sq += (x + p) * (x + p) - x * x;
    }
    let loc = best.1.rem_euclid(p);
    // re-evaluate with true wrapped residuals
    let cost = wrapped_sq_cost(values, F::lit(loc), period);
    (F::lit(loc), cost)
}

pub fn wrapped_sq_cost<F: Real>(values: &[F], center: F, period: F) -> F {
    values
        .iter()
        .map(|v| {
            let r = wrap_period(*v - center, period);
            r * r
        })
        .sum()
}
