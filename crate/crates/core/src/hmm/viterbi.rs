use super::{key_term, HmmError, HmmModel};
use crate::real::Real;
use crate::trips::{Observation, Trip};

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded<F> {
    pub path: Vec<usize>,
    pub log_lik: F,
}

/// Per-state emission log-likelihood of one observation. Evaluated once per
/// record, so tied states cost nothing extra.
fn emission_column<F: Real>(model: &HmmModel<F>, obs: &Observation<F>, records: &mut Vec<F>, out: &mut Vec<F>) {
    records.clear();
    records.extend(model.emissions.iter().map(|e| e.loglik(obs, model.hyper.c)));
    out.clear();
    out.extend((0..model.n_states()).map(|i| {
        let k = key_term(model.states[i], obs);
        if k == F::neg_infinity() {
            k
        } else {
            records[model.record_of(i)]
        }
    }));
}

/// Runs the max-product recursion, calling `visit` with `delta_t` after each
/// step. Returns back-pointers for steps `1..T`.
fn forward<F: Real>(model: &HmmModel<F>, obs: &[Observation<F>], mut visit: impl FnMut(usize, &[F])) -> Vec<Vec<u32>> {
    let n = model.n_states();
    let mut records = Vec::new();
    let mut col = Vec::new();
    emission_column(model, &obs[0], &mut records, &mut col);
    let mut delta: Vec<F> = (0..n).map(|i| model.theta0[i].ln() + col[i]).collect();
    visit(0, &delta);
    let mut back = Vec::with_capacity(obs.len().saturating_sub(1));
    let mut next = vec![F::neg_infinity(); n];
    let mut ptr = vec![u32::MAX; n];
    for (t, o) in obs.iter().enumerate().skip(1) {
        next.iter_mut().for_each(|x| *x = F::neg_infinity());
        ptr.iter_mut().for_each(|p| *p = u32::MAX);
        for (i, row) in model.trans.iter().enumerate() {
            let di = delta[i];
            if di == F::neg_infinity() {
                continue;
            }
            for &(j, p) in row {
                let cand = di + p.ln();
                // strict comparison: ties keep the lowest predecessor
                if cand > next[j] {
                    next[j] = cand;
                    ptr[j] = i as u32;
                }
            }
        }
        emission_column(model, o, &mut records, &mut col);
        for j in 0..n {
            next[j] += col[j];
        }
        std::mem::swap(&mut delta, &mut next);
        visit(t, &delta);
        back.push(ptr.clone());
    }
    back
}

fn argmax<F: Real>(v: &[F]) -> Option<(usize, F)> {
    let mut best: Option<(usize, F)> = None;
    for (i, &x) in v.iter().enumerate() {
        if x > F::neg_infinity() && best.is_none_or(|b| x > b.1) {
            best = Some((i, x));
        }
    }
    best
}

/// Most likely state sequence of a whole trip.
pub fn viterbi<F: Real>(model: &HmmModel<F>, trip: &Trip<F>) -> Result<Decoded<F>, HmmError> {
    if trip.obs.is_empty() {
        return Err(HmmError::Undecodable { trip: trip.id.clone() });
    }
    let mut last = Vec::new();
    let back = forward(model, &trip.obs, |t, d| {
        if t + 1 == trip.obs.len() {
            last = d.to_vec();
        }
    });
    let (end, log_lik) = argmax(&last).ok_or_else(|| HmmError::Undecodable { trip: trip.id.clone() })?;
    let mut path = vec![end; trip.obs.len()];
    for t in (1..trip.obs.len()).rev() {
        path[t - 1] = back[t - 1][path[t]] as usize;
    }
    Ok(Decoded { path, log_lik })
}

/// Final state of the most likely path through every prefix `obs[..=t]`.
pub fn prefix_states<F: Real>(model: &HmmModel<F>, trip: &Trip<F>) -> Result<Vec<usize>, HmmError> {
    let mut out = Vec::with_capacity(trip.obs.len());
    let mut failed = trip.obs.is_empty();
    forward(model, &trip.obs, |_, d| match argmax(d) {
        Some((i, _)) => out.push(i),
        None => failed = true,
    });
    if failed {
        return Err(HmmError::Undecodable { trip: trip.id.clone() });
    }
    Ok(out)
}
