//! Split and merge moves. A split of topic `k` relabels its words by their
//! sub-cluster halves and divides `beta_k` as `(beta_k u, beta_k (1 - u))` with
//! `u ~ Beta(mbar_l, mbar_r)`. A merge is the exact reverse move. Document
//! proportions and topic word distributions are integrated out of the
//! acceptance ratio and redrawn by the next Gibbs sweep.

use rand::Rng;

use super::gibbs::sample_crt;
use super::{dm_topic, ln_g, phase, HdpState, SubCluster};
use crate::real::{sample_beta_pair, sample_categorical, sample_dirichlet, Real};
use crate::stream::Streams;

fn ln_beta_fn(a: f64, b: f64) -> f64 {
    ln_g(a) + ln_g(b) - ln_g(a + b)
}

/// Log acceptance ratio of splitting a single weight `bk` into
/// `(bk u, bk (1 - u))`, given per-document counts of both parts, proposal
/// shape `c`, and word counts of both parts.
fn split_core(gamma: f64, alpha: f64, bk: f64, u: f64, c: [f64; 2], docs: &[[u32; 2]], words: [&[u32]; 2], lambda: f64) -> f64 {
    let (aa, ab, ak) = (alpha * bk * u, alpha * bk * (1.0 - u), alpha * bk);
    let mut s = gamma.ln() + ln_beta_fn(c[0], c[1]) - c[0] * u.ln() - c[1] * (1.0 - u).ln();
    for n in docs {
        let (na, nb) = (n[0] as f64, n[1] as f64);
        if na + nb == 0.0 {
            continue;
        }
        if na > 0.0 {
            s += ln_g(aa + na) - ln_g(aa);
        }
        if nb > 0.0 {
            s += ln_g(ab + nb) - ln_g(ab);
        }
        s -= ln_g(ak + na + nb) - ln_g(ak);
    }
    let merged: Vec<u32> = words[0].iter().zip(words[1]).map(|(a, b)| a + b).collect();
    s + dm_topic(words[0], lambda) + dm_topic(words[1], lambda) - dm_topic(&merged, lambda)
}

/// Log Hastings ratio for splitting topic `k` along its halves with weight
/// fraction `u`. `None` when a half is empty.
pub fn split_log_ratio<F: Real>(state: &HdpState<F>, k: usize, u: f64) -> Option<f64> {
    let s = &state.sub[k];
    if s.words[0].iter().all(|&c| c == 0) || s.words[1].iter().all(|&c| c == 0) {
        return None;
    }
    let c = sub_tables(state, k);
    let docs: Vec<[u32; 2]> = state.docs.iter().map(|d| d.nb[k]).collect();
    let h = &state.hyper;
    Some(split_core(h.gamma.f64(), h.alpha.f64(), state.beta[k].f64(), u, c, &docs, [&s.words[0], &s.words[1]], h.lambda.f64()))
}

/// Log Hastings ratio for merging topics `a` and `b`.
pub fn merge_log_ratio<F: Real>(state: &HdpState<F>, a: usize, b: usize) -> f64 {
    let (ba, bb) = (state.beta[a].f64(), state.beta[b].f64());
    let bk = ba + bb;
    let u = ba / bk;
    let c = [state.table_total(a) as f64, state.table_total(b) as f64];
    let docs: Vec<[u32; 2]> = state.docs.iter().map(|d| [d.n[a], d.n[b]]).collect();
    let h = &state.hyper;
    -split_core(h.gamma.f64(), h.alpha.f64(), bk, u, c, &docs, [&state.topic_words[a], &state.topic_words[b]], h.lambda.f64())
}

fn sub_tables<F: Real>(state: &HdpState<F>, k: usize) -> [f64; 2] {
    let mut c = [0.0; 2];
    for d in &state.docs {
        c[0] += d.mb[k][0] as f64;
        c[1] += d.mb[k][1] as f64;
    }
    c
}

/// Proposes splitting topic `k`; applies it and returns `true` on acceptance.
pub fn propose_split<F: Real, R: Rng + ?Sized>(state: &mut HdpState<F>, k: usize, rng: &mut R, streams: &Streams) -> bool {
    let c = sub_tables(state, k);
    if c[0] == 0.0 || c[1] == 0.0 {
        return false;
    }
    let u = sample_beta_pair(c[0], c[1], rng)[0].clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
    let Some(log_h) = split_log_ratio(state, k, u) else {
        return false;
    };
    if F::sample_open01(rng).f64().ln() < log_h {
        apply_split(state, k, u, streams);
        true
    } else {
        false
    }
}

/// Proposes merging topics `a` and `b`; applies it and returns `true` on
/// acceptance.
pub fn propose_merge<F: Real, R: Rng + ?Sized>(state: &mut HdpState<F>, a: usize, b: usize, rng: &mut R, streams: &Streams) -> bool {
    assert!(a != b);
    let (a, b) = (a.min(b), a.max(b));
    if F::sample_open01(rng).f64().ln() < merge_log_ratio(state, a, b) {
        apply_merge(state, a, b, streams);
        true
    } else {
        false
    }
}

/// Splits topic `k`: the left half keeps index `k`, the right half becomes
/// the new last topic. Both get fresh sub-clusters.
pub(crate) fn apply_split<F: Real>(state: &mut HdpState<F>, k: usize, u: f64, streams: &Streams) {
    let b = state.k();
    let uf = F::lit(u);
    let bk = state.beta[k];
    state.beta[k] = bk * uf;
    state.beta.insert(b, bk * (F::one() - uf));
    let old = state.sub[k].clone();
    state.theta[k] = old.theta_bar[0].clone();
    state.theta.push(old.theta_bar[1].clone());
    state.topic_words.push(Vec::new());
    state.sub.push(old.clone());
    for d in &mut state.docs {
        for (z, &h) in d.z.iter_mut().zip(&d.zb) {
            if *z as usize == k && h == 1 {
                *z = b as u32;
            }
        }
        let p = d.pi[k];
        d.pi[k] = p * uf;
        d.pi.insert(b, p * (F::one() - uf));
        d.n.push(0);
        d.nb.push([0; 2]);
        d.m.push(0);
        d.mb.push([0; 2]);
        d.pib.push([F::lit(0.5); 2]);
    }
    let mut rng = streams.item(phase::FRESH, k as u64);
    fresh_subcluster(state, &[k, b], &mut rng);
}

/// Merges topic `b` into `a` (`a < b`). The former topics become the
/// sub-clusters of the merged one.
pub(crate) fn apply_merge<F: Real>(state: &mut HdpState<F>, a: usize, b: usize, streams: &Streams) {
    debug_assert!(a < b);
    let (ba, bb) = (state.beta[a], state.beta[b]);
    let u = ba / (ba + bb);
    let merged: Vec<u32> = state.topic_words[a].iter().zip(&state.topic_words[b]).map(|(x, y)| x + y).collect();
    state.sub[a] = SubCluster {
        beta_bar: [u, F::one() - u],
        theta_bar: [state.theta[a].clone(), state.theta[b].clone()],
        words: [state.topic_words[a].clone(), state.topic_words[b].clone()],
        age: 0,
    };
    let mut rng = streams.item(phase::FRESH, (1 << 40) | a as u64);
    let lambda = state.hyper.lambda;
    let params: Vec<F> = merged.iter().map(|&c| lambda + F::from_count(c as usize)).collect();
    state.theta[a] = sample_dirichlet(&params, &mut rng);
    state.topic_words[a] = merged;
    state.beta[a] = ba + bb;
    state.beta.remove(b);
    state.theta.remove(b);
    state.topic_words.remove(b);
    state.sub.remove(b);
    for d in &mut state.docs {
        for (z, h) in d.z.iter_mut().zip(d.zb.iter_mut()) {
            let t = *z as usize;
            if t == a {
                *h = 0;
            } else if t == b {
                *h = 1;
                *z = a as u32;
            } else if t > b {
                *z -= 1;
            }
        }
        let (pa, pb) = (d.pi[a], d.pi.remove(b));
        let tot = pa + pb;
        d.pib[a] = if tot > F::zero() { [pa / tot, pb / tot] } else { [F::lit(0.5); 2] };
        d.pib.remove(b);
        d.pi[a] = tot;
        d.nb[a] = [d.n[a], d.n[b]];
        d.nb.remove(b);
        d.n[a] += d.n.remove(b);
        d.mb[a] = [d.m[a], d.m[b]];
        d.mb.remove(b);
        d.m[a] += d.m.remove(b);
    }
}

/// Fresh sub-clusters for topics `ts`. Each topic's halves are seeded by two
/// member documents, the second drawn in proportion to its squared distance
/// from the first (as in k-means++). Every word joins a half by a draw
/// weighted by the seed distributions, which breaks the symmetry between
/// halves at once. The remaining sub-cluster variables and
/// the topics' table counts are then drawn from their conditionals.
pub(crate) fn fresh_subcluster<F: Real, R: Rng + ?Sized>(state: &mut HdpState<F>, ts: &[usize], rng: &mut R) {
    let v = state.vocab_size;
    let lambda = state.hyper.lambda.f64();
    for &t in ts {
        let members: Vec<usize> = (0..state.docs.len()).filter(|&j| state.docs[j].n[t] > 0).collect();
        let hist = |j: usize| {
            let d = &state.docs[j];
            let mut c = vec![0.0; v];
            d.words.iter().zip(&d.z).filter(|(_, &z)| z as usize == t).for_each(|(&w, _)| c[w as usize] += 1.0);
            let n = d.n[t] as f64;
            c.iter_mut().for_each(|x| *x /= n);
            c
        };
        let seeds: Option<[Vec<f64>; 2]> = (members.len() >= 2).then(|| {
            // first seed uniform, second by squared distance to the first
            let a = hist(members[rng.random_range(0..members.len())]);
            let dist: Vec<f64> = members.iter().map(|&j| hist(j).iter().zip(&a).map(|(x, y)| (x - y) * (x - y)).sum()).collect();
            let b = hist(members[sample_categorical(&dist, rng)]);
            [a, b].map(|h| {
                let c: Vec<f64> = h.iter().map(|x| x + lambda / 10.0).collect();
                let tot: f64 = c.iter().sum();
                c.into_iter().map(|x| x / tot).collect()
            })
        });
        for d in &mut state.docs {
            for ((&w, z), h) in d.words.iter().zip(&d.z).zip(d.zb.iter_mut()) {
                if *z as usize != t {
                    continue;
                }
                *h = match &seeds {
                    Some(sd) => {
                        let p0 = sd[0][w as usize] / (sd[0][w as usize] + sd[1][w as usize]);
                        (rng.random::<f64>() >= p0) as u8
                    }
                    None => rng.random_range(0..2u8),
                };
            }
        }
    }
    state.recount();
    let alpha = state.hyper.alpha;
    let lambda = state.hyper.lambda;
    for &t in ts {
        let half = F::lit(0.5);
        let mut mbar = [0usize; 2];
        for d in &mut state.docs {
            d.m[t] = sample_crt(d.n[t], (alpha * state.beta[t]).f64(), rng);
            d.mb[t] = [0, 1].map(|h| sample_crt(d.nb[t][h], (alpha * half).f64(), rng));
            mbar[0] += d.mb[t][0] as usize;
            mbar[1] += d.mb[t][1] as usize;
        }
        let s = &mut state.sub[t];
        s.age = 0;
        let g = state.hyper.gamma;
        s.beta_bar = sample_beta_pair(g + F::from_count(mbar[0]), g + F::from_count(mbar[1]), rng);
        for h in 0..2 {
            let params: Vec<F> = s.words[h].iter().map(|&c| lambda + F::from_count(c as usize)).collect();
            s.theta_bar[h] = sample_dirichlet(&params, rng);
        }
        let bb = s.beta_bar;
        for d in &mut state.docs {
            d.pib[t] = sample_beta_pair(
                alpha * bb[0] + F::from_count(d.nb[t][0] as usize),
                alpha * bb[1] + F::from_count(d.nb[t][1] as usize),
                rng,
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::two_block;
    use super::super::*;
    use super::*;
    use crate::trips::{sample_corpus, SyntheticCorpusTruth};

    fn hyper() -> HdpHyper<f64> {
        HdpHyper { gamma: 1.0, alpha: 1.0, lambda: 0.5 }
    }

    #[test]
    fn merge_ratio_inverts_split_ratio() {
        let c = two_block(1, 10, 12);
        let mut s = init_state::<f64>(&c, hyper(), 1, 3).unwrap();
        let u = 0.37;
        let forward = split_log_ratio(&s, 0, u).unwrap();
        let mb: Vec<[u32; 2]> = s.docs.iter().map(|d| d.mb[0]).collect();
        apply_split(&mut s, 0, u, &Streams::new(0, 0));
        s.audit().unwrap();
        assert_eq!(s.k(), 2);
        // the reverse move uses child table counts; pin them to the forward proposal's
        for (d, m) in s.docs.iter_mut().zip(&mb) {
            d.m = vec![m[0], m[1]];
        }
        let backward = merge_log_ratio(&s, 0, 1);
        assert!((forward + backward).abs() < 1e-9, "{forward} {backward}");
    }

    #[test]
    fn merge_then_audit() {
        let c = two_block(2, 10, 12);
        let labels: Vec<Vec<u32>> = c.docs.iter().map(|d| d.words.iter().map(|&w| (w % 3) as u32).collect()).collect();
        let mut s = init_from_labels::<f64>(&c, hyper(), &labels, 0).unwrap();
        let total_before: Vec<u64> = (0..3).map(|t| s.topic_total(t)).collect();
        apply_merge(&mut s, 0, 2, &Streams::new(0, 0));
        s.audit().unwrap();
        assert_eq!(s.k(), 2);
        assert_eq!(s.topic_total(0), total_before[0] + total_before[2]);
        assert_eq!(s.topic_total(1), total_before[1]);
    }

    #[test]
    fn planted_split_is_found_quickly() {
        let mut found = 0;
        for seed in 0..50 {
            let c = two_block(seed, 20, 20);
            let cfg = SamplerConfig { iters: 20, seed, ..Default::default() };
            let (s, d) = run_sampler::<f64>(&c, hyper(), &cfg, |_, _| None).unwrap();
            if s.k() >= 2 && d.trace.iter().any(|t| t.splits > 0) {
                found += 1;
            }
        }
        assert!(found >= 45, "{found}/50");
    }

    fn settle(c: &crate::corpus::Corpus, labels: &[Vec<u32>], seed: u64) -> HdpState<f64> {
        let cfg = SamplerConfig { fixed_k: true, seed, ..Default::default() };
        let mut s = init_from_labels::<f64>(c, hyper(), labels, seed).unwrap();
        for _ in 0..3 {
            iterate(&mut s, &cfg);
        }
        s
    }

    #[test]
    fn duplicated_topics_merge() {
        let mut accepted = 0;
        for seed in 0..50 {
            let truth =
                SyntheticCorpusTruth { k_true: 1, topics: vec![vec![0.25; 4]], doc_mixtures: vec![vec![1.0]; 20], doc_sizes: vec![20; 20] };
            let c = sample_corpus(&truth, seed).unwrap().corpus;
            let labels: Vec<Vec<u32>> = c.docs.iter().enumerate().map(|(j, d)| vec![(j % 2) as u32; d.words.len()]).collect();
            let mut s = settle(&c, &labels, seed);
            let mut rng = crate::stream::seeded(seed);
            if propose_merge(&mut s, 0, 1, &mut rng, &Streams::new(seed, 99)) {
                accepted += 1;
                s.audit().unwrap();
            }
        }
        assert!(accepted >= 45, "{accepted}/50");
    }

    #[test]
    fn disjoint_topics_rarely_merge() {
        let mut accepted = 0;
        for seed in 0..50 {
            let c = two_block(seed, 20, 20);
            let labels: Vec<Vec<u32>> = c.docs.iter().map(|d| d.words.iter().map(|&w| (w >= 4) as u32).collect()).collect();
            let mut s = settle(&c, &labels, seed);
            let mut rng = crate::stream::seeded(seed);
            if propose_merge(&mut s, 0, 1, &mut rng, &Streams::new(seed, 99)) {
                accepted += 1;
            }
        }
        assert!(accepted <= 2, "{accepted}/50");
    }
}
