use rand::Rng;
use rayon::prelude::*;

use super::{phase, HdpState};
use crate::real::{sample_categorical, sample_dirichlet, Real};
use crate::stream::Streams;

/// Number of occupied tables when `n` customers enter a Chinese restaurant
/// with concentration `a`: customer `i` opens a table with probability
/// `a / (a + i - 1)`.
pub fn sample_crt<R: Rng + ?Sized>(n: u32, a: f64, rng: &mut R) -> u32 {
    if n == 0 {
        return 0;
    }
    let mut m = 1;
    for i in 1..n {
        if rng.random::<f64>() < a / (a + i as f64) {
            m += 1;
        }
    }
    m
}

/// Document proportions over the `K` topics and the remainder.
pub fn sample_pi<F: Real>(state: &mut HdpState<F>, streams: &Streams) {
    let alpha = state.hyper.alpha;
    let beta = &state.beta;
    let k = beta.len() - 1;
    state.docs.par_iter_mut().enumerate().for_each(|(j, d)| {
        let mut rng = streams.item(phase::PI, j as u64);
        let params: Vec<F> = (0..=k).map(|t| alpha * beta[t] + if t < k { F::from_count(d.n[t] as usize) } else { F::zero() }).collect();
        d.pi = sample_dirichlet(&params, &mut rng);
    });
}

pub fn sample_theta<F: Real>(state: &mut HdpState<F>, streams: &Streams) {
    let lambda = state.hyper.lambda;
    let counts = &state.topic_words;
    state.theta = (0..counts.len())
        .into_par_iter()
        .map(|t| {
            let mut rng = streams.item(phase::THETA, t as u64);
            let params: Vec<F> = counts[t].iter().map(|&c| lambda + F::from_count(c as usize)).collect();
            sample_dirichlet(&params, &mut rng)
        })
        .collect();
}

/// Labels drawn independently given `pi` and `theta`, restricted to the
/// instantiated topics. Topics may become empty; see [`remove_empty_topics`].
pub fn sample_z<F: Real>(state: &mut HdpState<F>, streams: &Streams) {
    let theta = &state.theta;
    let k = theta.len();
    state.docs.par_iter_mut().enumerate().for_each(|(j, d)| {
        let mut rng = streams.item(phase::Z, j as u64);
        let mut w = vec![F::zero(); k];
        for (i, &x) in d.words.iter().enumerate() {
            for t in 0..k {
                w[t] = d.pi[t] * theta[t][x as usize];
            }
            d.z[i] = sample_categorical(&w, &mut rng) as u32;
        }
    });
    state.recount();
}

/// Sequential label sweep that never empties a topic, so `K` stays fixed.
pub fn sample_z_fixed<F: Real, R: Rng + ?Sized>(state: &mut HdpState<F>, rng: &mut R) {
    let k = state.k();
    let mut totals: Vec<u64> = (0..k).map(|t| state.topic_total(t)).collect();
    let mut w = vec![F::zero(); k];
    for d in &mut state.docs {
        for (i, &x) in d.words.iter().enumerate() {
            let old = d.z[i] as usize;
            if totals[old] == 1 {
                continue;
            }
            for t in 0..k {
                w[t] = d.pi[t] * state.theta[t][x as usize];
            }
            let new = sample_categorical(&w, rng);
            totals[old] -= 1;
            totals[new] += 1;
            d.z[i] = new as u32;
        }
    }
    state.recount();
}

/// Drops topics without words, folding their global and document weights
/// into the remainder.
pub fn remove_empty_topics<F: Real>(state: &mut HdpState<F>) {
    for t in (0..state.k()).rev() {
        if state.topic_total(t) > 0 {
            continue;
        }
        let bt = state.beta.remove(t);
        *state.beta.last_mut().expect("remainder") += bt;
        state.theta.remove(t);
        state.topic_words.remove(t);
        state.sub.remove(t);
        for d in &mut state.docs {
            let p = d.pi.remove(t);
            *d.pi.last_mut().expect("remainder") += p;
            d.n.remove(t);
            d.nb.remove(t);
            d.m.remove(t);
            d.mb.remove(t);
            d.pib.remove(t);
            for z in &mut d.z {
                if *z as usize > t {
                    *z -= 1;
                }
            }
        }
    }
}

/// Table counts of every document and topic.
pub fn sample_m<F: Real>(state: &mut HdpState<F>, streams: &Streams) {
    let alpha = state.hyper.alpha.f64();
    let beta = &state.beta;
    state.docs.par_iter_mut().enumerate().for_each(|(j, d)| {
        let mut rng = streams.item(phase::M, j as u64);
        d.m = d.n.iter().enumerate().map(|(t, &n)| sample_crt(n, alpha * beta[t].f64(), &mut rng)).collect();
    });
}

/// Global weights given the table counts: `Dir(m_.1, ..., m_.K, gamma)`.
pub fn sample_beta<F: Real, R: Rng + ?Sized>(state: &mut HdpState<F>, rng: &mut R) {
    let k = state.k();
    let mut params: Vec<F> = (0..k)
        .map(|t| {
            let m = state.table_total(t);
            assert!(m > 0, "topic {t} has no tables");
            F::from_count(m as usize)
        })
        .collect();
    params.push(state.hyper.gamma);
    state.beta = sample_dirichlet(&params, rng);
}

/// One sweep over the sub-cluster variables: halves of every word, their
/// table counts, then the sub-cluster weights and word distributions.
pub fn sample_subclusters<F: Real>(state: &mut HdpState<F>, streams: &Streams) {
    {
        let sub = &state.sub;
        state.docs.par_iter_mut().enumerate().for_each(|(j, d)| {
            let mut rng = streams.item(phase::SUB_Z, j as u64);
            for (i, &x) in d.words.iter().enumerate() {
                let t = d.z[i] as usize;
                let w = [d.pib[t][0] * sub[t].theta_bar[0][x as usize], d.pib[t][1] * sub[t].theta_bar[1][x as usize]];
                d.zb[i] = sample_categorical(&w, &mut rng) as u8;
            }
        });
    }
    state.recount();
    sample_sub_globals(state, streams);
    for s in &mut state.sub {
        s.age += 1;
    }
}

/// Sub-cluster table counts, weights, document proportions and word
/// distributions given the current halves.
pub(crate) fn sample_sub_globals<F: Real>(state: &mut HdpState<F>, streams: &Streams) {
    let alpha = state.hyper.alpha;
    let gamma = state.hyper.gamma;
    let lambda = state.hyper.lambda;
    {
        let sub = &state.sub;
        state.docs.par_iter_mut().enumerate().for_each(|(j, d)| {
            let mut rng = streams.item(phase::SUB_M, j as u64);
            d.mb =
                d.nb.iter()
                    .enumerate()
                    .map(|(t, nb)| [0, 1].map(|h| sample_crt(nb[h], (alpha * sub[t].beta_bar[h]).f64(), &mut rng)))
                    .collect();
        });
    }
    let k = state.k();
    let mut mbar = vec![[0u64; 2]; k];
    for d in &state.docs {
        for t in 0..k {
            mbar[t][0] += d.mb[t][0] as u64;
            mbar[t][1] += d.mb[t][1] as u64;
        }
    }
    state.sub.par_iter_mut().enumerate().for_each(|(t, s)| {
        let mut rng = streams.item(phase::SUB_BETA, t as u64);
        let p = sample_dirichlet(&[gamma + F::from_count(mbar[t][0] as usize), gamma + F::from_count(mbar[t][1] as usize)], &mut rng);
        s.beta_bar = [p[0], p[1]];
        let mut rng = streams.item(phase::SUB_THETA, t as u64);
        for h in 0..2 {
            let params: Vec<F> = s.words[h].iter().map(|&c| lambda + F::from_count(c as usize)).collect();
            s.theta_bar[h] = sample_dirichlet(&params, &mut rng);
        }
    });
    let sub = &state.sub;
    state.docs.par_iter_mut().enumerate().for_each(|(j, d)| {
        let mut rng = streams.item(phase::SUB_PI, j as u64);
        d.pib = (0..k)
            .map(|t| {
                let a = [0, 1].map(|h| alpha * sub[t].beta_bar[h] + F::from_count(d.nb[t][h] as usize));
                let p = sample_dirichlet(&a, &mut rng);
                [p[0], p[1]]
            })
            .collect();
    });
}
