//! Exhaustive posterior of the fixed-`K` model for tiny corpora. Used to
//! validate the sampler and the predictive estimator.
//!
//! With `K` topics held fixed and no word in the remainder, integrating out
//! document proportions, topic word distributions and global weights leaves
//!
//! `p(z, m | x) ∝ Π_j Γ(α)/Γ(α + N_j) Π_jk s(n_jk, m_jk) α^m_jk
//!              · Γ(γ) Π_k Γ(m_.k) / Γ(m_.. + γ) · Π_k DM(x_k; λ)`
//!
//! where `s` are unsigned Stirling numbers of the first kind.

use super::{dm_topic, ln_g, HdpHyper};
use crate::real::log_sum_exp;

/// Unsigned Stirling numbers of the first kind, `s[n][m]` for `n <= max`.
pub fn stirling_first(max: usize) -> Vec<Vec<f64>> {
    let mut s = vec![vec![0.0; max + 1]; max + 1];
    s[0][0] = 1.0;
    for n in 1..=max {
        for m in 1..=n {
            s[n][m] = s[n - 1][m - 1] + (n - 1) as f64 * s[n - 1][m];
        }
    }
    s
}

/// `log Σ_m weight(z, m) · extra(m_..)`; `-inf` when a topic is empty.
fn log_weight(docs: &[Vec<usize>], z: &[Vec<usize>], v: usize, h: &HdpHyper<f64>, k: usize, extra: &dyn Fn(u64) -> f64) -> f64 {
    let mut n = vec![vec![0u32; k]; docs.len()];
    let mut words = vec![vec![0u32; v]; k];
    for (j, (d, zj)) in docs.iter().zip(z).enumerate() {
        for (&w, &t) in d.iter().zip(zj) {
            n[j][t] += 1;
            words[t][w] += 1;
        }
    }
    if words.iter().any(|c| c.iter().all(|&x| x == 0)) {
        return f64::NEG_INFINITY;
    }
    let max_n = n.iter().flatten().copied().max().unwrap_or(0) as usize;
    let s = stirling_first(max_n);
    let mut base: f64 = words.iter().map(|c| dm_topic(c, h.lambda)).sum();
    for d in docs {
        base += ln_g(h.alpha) - ln_g(h.alpha + d.len() as f64);
    }
    let cells: Vec<(usize, usize)> = (0..docs.len()).flat_map(|j| (0..k).map(move |t| (j, t))).filter(|&(j, t)| n[j][t] > 0).collect();
    let mut terms = Vec::new();
    let mut m = vec![0u32; cells.len()];
    enumerate_m(&cells, &n, &mut m, 0, &mut |m| {
        let mut totals = vec![0u64; k];
        let mut lw = 0.0;
        for (&(j, t), &mm) in cells.iter().zip(m.iter()) {
            totals[t] += mm as u64;
            lw += s[n[j][t] as usize][mm as usize].ln() + mm as f64 * h.alpha.ln();
        }
        let all: u64 = totals.iter().sum();
        lw += ln_g(h.gamma) + totals.iter().map(|&c| ln_g(c as f64)).sum::<f64>() - ln_g(all as f64 + h.gamma);
        terms.push(lw + extra(all).ln());
    });
    base + log_sum_exp(&terms)
}

fn enumerate_m(cells: &[(usize, usize)], n: &[Vec<u32>], m: &mut Vec<u32>, i: usize, f: &mut dyn FnMut(&[u32])) {
    if i == cells.len() {
        f(m);
        return;
    }
    let (j, t) = cells[i];
    for mm in 1..=n[j][t] {
        m[i] = mm;
        enumerate_m(cells, n, m, i + 1, f);
    }
}

fn for_each_z(docs: &[Vec<usize>], k: usize, f: &mut dyn FnMut(&[Vec<usize>])) {
    let total: usize = docs.iter().map(Vec::len).sum();
    let count = k.checked_pow(total as u32).expect("corpus too large to enumerate");
    assert!(count <= 1 << 22, "corpus too large to enumerate");
    let mut z: Vec<Vec<usize>> = docs.iter().map(|d| vec![0; d.len()]).collect();
    for mut code in 0..count {
        for zj in z.iter_mut() {
            for x in zj.iter_mut() {
                *x = code % k;
                code /= k;
            }
        }
        f(&z);
    }
}

/// Posterior probability of every labelling with all `k` topics non-empty.
pub fn exact_posterior(docs: &[Vec<usize>], v: usize, hyper: &HdpHyper<f64>, k: usize) -> Vec<(Vec<Vec<usize>>, f64)> {
    let mut out = Vec::new();
    for_each_z(docs, k, &mut |z| {
        let lw = log_weight(docs, z, v, hyper, k, &|_| 1.0);
        if lw.is_finite() {
            out.push((z.to_vec(), lw));
        }
    });
    let logs: Vec<f64> = out.iter().map(|x| x.1).collect();
    let norm = log_sum_exp(&logs);
    out.into_iter().map(|(z, l)| (z, (l - norm).exp())).collect()
}

/// Predictive probability of one more word `w` in document `j`. The new word
/// may join any of the `k` topics or open a new one, whose word distribution
/// averages to uniform.
pub fn exact_predictive(docs: &[Vec<usize>], j: usize, w: usize, v: usize, hyper: &HdpHyper<f64>, k: usize) -> f64 {
    let nj = docs[j].len() as f64;
    let (a, g) = (hyper.alpha, hyper.gamma);
    let mut extended = docs.to_vec();
    extended[j].push(w);
    let mut evidence = Vec::new();
    let mut fresh = Vec::new();
    let mut joined = Vec::new();
    for_each_z(docs, k, &mut |z| {
        let lw = log_weight(docs, z, v, hyper, k, &|_| 1.0);
        if !lw.is_finite() {
            return;
        }
        evidence.push(lw);
        fresh.push(log_weight(docs, z, v, hyper, k, &|all| a * g / ((all as f64 + g) * (a + nj) * v as f64)));
        let mut ze = z.to_vec();
        ze[j].push(0);
        for t in 0..k {
            *ze[j].last_mut().expect("pushed") = t;
            joined.push(log_weight(&extended, &ze, v, hyper, k, &|_| 1.0));
        }
    });
    let num = log_sum_exp(&[log_sum_exp(&joined), log_sum_exp(&fresh)]);
    (num - log_sum_exp(&evidence)).exp()
}
