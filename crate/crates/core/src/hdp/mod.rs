//! HDP topic model with a restricted direct-assignment Gibbs sampler,
//! left/right sub-clusters per topic, and split/merge moves built from them.
//!
//! Words are categorical with a symmetric Dirichlet(`lambda`) base measure.
//! The global weights `beta` carry `K + 1` entries; the last one is the
//! remainder mass of all uninstantiated topics. The Gibbs sweeps never create
//! topics: new topics appear only through accepted splits.

mod checkpoint;
pub mod exact;
mod gibbs;
mod report;
mod splitmerge;

pub use checkpoint::{load_checkpoint, save_checkpoint, COUNTS_FILE, STATE_FILE};
pub use gibbs::{
    remove_empty_topics, sample_beta, sample_crt, sample_m, sample_pi, sample_subclusters, sample_theta, sample_z, sample_z_fixed,
};
pub use report::{topic_report, TopicSummary, WordSummary};
pub use splitmerge::{merge_log_ratio, propose_merge, propose_split, split_log_ratio};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::real::Real;
use crate::stream::Streams;

pub(crate) mod phase {
    pub const INIT: u8 = 0;
    pub const PI: u8 = 1;
    pub const THETA: u8 = 2;
    pub const Z: u8 = 3;
    pub const M: u8 = 4;
    pub const BETA: u8 = 5;
    pub const SUB_Z: u8 = 6;
    pub const SUB_M: u8 = 7;
    pub const SUB_BETA: u8 = 8;
    pub const SUB_PI: u8 = 9;
    pub const SUB_THETA: u8 = 10;
    pub const SPLIT: u8 = 11;
    pub const MERGE: u8 = 12;
    pub const FRESH: u8 = 13;
}

#[derive(Debug, Error)]
pub enum HdpError {
    #[error("corpus has no words")]
    EmptyCorpus,
    #[error("invalid sampler setting: {0}")]
    Invalid(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HdpHyper<F> {
    /// Top-level concentration.
    pub gamma: F,
    /// Document-level concentration.
    pub alpha: F,
    /// Symmetric Dirichlet parameter of every topic's word distribution.
    pub lambda: F,
}

impl<F: Real> Default for HdpHyper<F> {
    fn default() -> Self {
        Self { gamma: F::lit(10.0), alpha: F::lit(0.1), lambda: F::lit(0.5) }
    }
}

impl<F: Real> HdpHyper<F> {
    pub fn validate(&self) -> Result<(), HdpError> {
        let ok = |x: F| x > F::zero() && x.is_finite();
        if ok(self.gamma) && ok(self.alpha) && ok(self.lambda) {
            Ok(())
        } else {
            Err(HdpError::Invalid("gamma, alpha and lambda must be positive".into()))
        }
    }
}

/// Left/right auxiliary mixture of one topic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubCluster<F> {
    pub beta_bar: [F; 2],
    pub theta_bar: [Vec<F>; 2],
    /// Word counts of each half.
    pub words: [Vec<u32>; 2],
    /// Iterations since the record was created.
    pub age: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocState<F> {
    pub words: Vec<u32>,
    pub z: Vec<u32>,
    /// Sub-cluster half (0 = left, 1 = right) of every word.
    pub zb: Vec<u8>,
    /// Words per topic.
    pub n: Vec<u32>,
    /// Words per topic half.
    pub nb: Vec<[u32; 2]>,
    /// Table counts per topic and per topic half.
    pub m: Vec<u32>,
    pub mb: Vec<[u32; 2]>,
    /// Topic proportions, `K + 1` entries.
    pub pi: Vec<F>,
    pub pib: Vec<[F; 2]>,
}

impl<F> DocState<F> {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HdpState<F> {
    pub hyper: HdpHyper<F>,
    pub vocab_size: usize,
    /// Global topic weights, `K + 1` entries.
    pub beta: Vec<F>,
    pub theta: Vec<Vec<F>>,
    /// Word counts per topic.
    pub topic_words: Vec<Vec<u32>>,
    pub sub: Vec<SubCluster<F>>,
    pub docs: Vec<DocState<F>>,
    /// Completed iterations.
    pub iteration: u64,
}

impl<F: Real> HdpState<F> {
    pub fn k(&self) -> usize {
        self.theta.len()
    }

    /// Total words assigned to topic `k`.
    pub fn topic_total(&self, k: usize) -> u64 {
        self.topic_words[k].iter().map(|&c| c as u64).sum()
    }

    pub fn table_total(&self, k: usize) -> u64 {
        self.docs.iter().map(|d| d.m[k] as u64).sum()
    }

    /// Recomputes every count from `z` and `zb`.
    pub fn recount(&mut self) {
        let k = self.k();
        let v = self.vocab_size;
        for d in &mut self.docs {
            d.n = vec![0; k];
            d.nb = vec![[0; 2]; k];
            for (&t, &h) in d.z.iter().zip(&d.zb) {
                d.n[t as usize] += 1;
                d.nb[t as usize][h as usize] += 1;
            }
        }
        self.topic_words = vec![vec![0; v]; k];
        for s in &mut self.sub {
            s.words = [vec![0; v], vec![0; v]];
        }
        for d in &self.docs {
            for ((&w, &t), &h) in d.words.iter().zip(&d.z).zip(&d.zb) {
                self.topic_words[t as usize][w as usize] += 1;
                self.sub[t as usize].words[h as usize][w as usize] += 1;
            }
        }
    }

    /// Checks every structural and normalization invariant.
    pub fn audit(&self) -> Result<(), String> {
        let k = self.k();
        let tol = 1e-9_f64.max(F::epsilon().f64() * 64.0);
        let sums_to_one = |v: &[F]| (v.iter().map(|x| x.f64()).sum::<f64>() - 1.0).abs() <= tol && v.iter().all(|x| *x >= F::zero());
        if self.beta.len() != k + 1 || !sums_to_one(&self.beta) {
            return Err("beta is not a (K+1)-distribution".into());
        }
        if self.sub.len() != k || self.topic_words.len() != k {
            return Err("per-topic arrays have the wrong length".into());
        }
        for (t, th) in self.theta.iter().enumerate() {
            if th.len() != self.vocab_size || !sums_to_one(th) {
                return Err(format!("theta[{t}] is not a distribution"));
            }
            let s = &self.sub[t];
            if !sums_to_one(&s.beta_bar) || !sums_to_one(&s.theta_bar[0]) || !sums_to_one(&s.theta_bar[1]) {
                return Err(format!("sub-cluster {t} is not normalized"));
            }
        }
        let mut fresh = self.clone();
        fresh.recount();
        for (j, (d, f)) in self.docs.iter().zip(&fresh.docs).enumerate() {
            if d.z.len() != d.words.len() || d.zb.len() != d.words.len() {
                return Err(format!("doc {j}: label arrays have the wrong length"));
            }
            if d.z.iter().any(|&t| t as usize >= k) || d.zb.iter().any(|&h| h > 1) {
                return Err(format!("doc {j}: label out of range"));
            }
            if d.n != f.n || d.nb != f.nb {
                return Err(format!("doc {j}: counts differ from a recount"));
            }
            if d.n.iter().map(|&c| c as usize).sum::<usize>() != d.len() {
                return Err(format!("doc {j}: counts do not sum to the document length"));
            }
            if d.pi.len() != k + 1 || !sums_to_one(&d.pi) {
                return Err(format!("doc {j}: pi is not a (K+1)-distribution"));
            }
            if d.m.len() != k || d.mb.len() != k || d.pib.len() != k {
                return Err(format!("doc {j}: per-topic arrays have the wrong length"));
            }
            for t in 0..k {
                if (d.n[t] == 0) != (d.m[t] == 0) || d.m[t] > d.n[t] {
                    return Err(format!("doc {j}: table count {t} inconsistent with word count"));
                }
                if !sums_to_one(&d.pib[t]) {
                    return Err(format!("doc {j}: sub proportions of topic {t} not normalized"));
                }
            }
        }
        if self.topic_words != fresh.topic_words {
            return Err("topic word counts differ from a recount".into());
        }
        for t in 0..k {
            if self.sub[t].words != fresh.sub[t].words {
                return Err(format!("sub-cluster {t} counts differ from a recount"));
            }
            if self.topic_total(t) == 0 {
                return Err(format!("topic {t} is empty"));
            }
        }
        Ok(())
    }

    /// Collapsed log joint of words and labels given `beta`: Dirichlet-
    /// multinomial terms for topics and documents.
    pub fn log_joint(&self) -> f64 {
        let lam = self.hyper.lambda.f64();
        let alpha = self.hyper.alpha.f64();
        let topics: f64 = self.topic_words.iter().map(|c| dm_topic(c, lam)).sum();
        let docs: f64 = self
            .docs
            .iter()
            .map(|d| {
                let mut s = ln_g(alpha) - ln_g(alpha + d.len() as f64);
                for (t, &n) in d.n.iter().enumerate() {
                    if n > 0 {
                        let a = alpha * self.beta[t].f64();
                        s += ln_g(a + n as f64) - ln_g(a);
                    }
                }
                s
            })
            .sum();
        topics + docs
    }
}

pub(crate) fn ln_g(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// Dirichlet-multinomial log marginal of one topic's word counts.
pub(crate) fn dm_topic(counts: &[u32], lambda: f64) -> f64 {
    let v = counts.len() as f64;
    let n: f64 = counts.iter().map(|&c| c as f64).sum();
    let mut s = ln_g(v * lambda) - ln_g(v * lambda + n);
    for &c in counts {
        if c > 0 {
            s += ln_g(lambda + c as f64) - ln_g(lambda);
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub iters: usize,
    pub k0: usize,
    pub seed: u64,
    pub split_merge: bool,
    /// Sub-clusters must have seen this many sweeps before a split is proposed.
    pub min_split_age: u32,
    /// Sub-cluster sweeps per iteration.
    pub sub_sweeps: usize,
    /// A topic whose split was rejected gets fresh sub-clusters once they are
    /// this many iterations old. Zero disables resets.
    pub sub_reset_age: u32,
    /// Keep exactly `k0` topics: no split/merge, and the last word of a topic
    /// never leaves it.
    pub fixed_k: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { iters: 500, k0: 1, seed: 0, split_merge: true, min_split_age: 3, sub_sweeps: 1, sub_reset_age: 0, fixed_k: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: u64,
    pub k: usize,
    pub log_joint: f64,
    pub splits: usize,
    pub merges: usize,
    pub heldout: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SamplerDiagnostics {
    pub trace: Vec<IterationStats>,
}

impl SamplerDiagnostics {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,K,loglik,accepts_split,accepts_merge,heldout_ll\n");
        for s in &self.trace {
            let ho = s.heldout.map(|h| format!("{h:.10}")).unwrap_or_default();
            out.push_str(&format!("{},{},{:.10},{},{},{}\n", s.iteration, s.k, s.log_joint, s.splits, s.merges, ho));
        }
        out
    }
}

/// Random initial labels over `k0` topics, then every other variable drawn
/// from its conditional.
pub fn init_state<F: Real>(corpus: &Corpus, hyper: HdpHyper<F>, k0: usize, seed: u64) -> Result<HdpState<F>, HdpError> {
    if k0 == 0 {
        return Err(HdpError::Invalid("k0 must be at least 1".into()));
    }
    let streams = Streams::new(seed, u64::MAX);
    let labels: Vec<Vec<u32>> = corpus
        .docs
        .iter()
        .enumerate()
        .map(|(j, d)| {
            let mut rng = streams.item(phase::INIT, j as u64);
            d.words.iter().map(|_| rng.random_range(0..k0 as u32)).collect()
        })
        .collect();
    init_from_labels(corpus, hyper, &labels, seed)
}

/// State with the given topic labels; empty label values are dropped.
pub fn init_from_labels<F: Real>(corpus: &Corpus, hyper: HdpHyper<F>, labels: &[Vec<u32>], seed: u64) -> Result<HdpState<F>, HdpError> {
    hyper.validate()?;
    if corpus.num_words() == 0 {
        return Err(HdpError::EmptyCorpus);
    }
    if labels.len() != corpus.num_docs() || labels.iter().zip(&corpus.docs).any(|(l, d)| l.len() != d.words.len()) {
        return Err(HdpError::Invalid("labels do not match the corpus".into()));
    }
    let k = labels.iter().flatten().map(|&t| t as usize + 1).max().unwrap_or(1);
    let streams = Streams::new(seed, u64::MAX - 1);
    let docs = corpus
        .docs
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(j, (d, l))| {
            let mut rng = streams.item(phase::INIT, j as u64);
            DocState {
                words: d.words.iter().map(|&w| w as u32).collect(),
                z: l.clone(),
                zb: d.words.iter().map(|_| rng.random_range(0..2u8)).collect(),
                n: Vec::new(),
                nb: Vec::new(),
                m: vec![0; k],
                mb: vec![[0; 2]; k],
                pi: vec![F::one() / F::from_count(k + 1); k + 1],
                pib: vec![[F::lit(0.5); 2]; k],
            }
        })
        .collect();
    let v = corpus.vocab_size;
    let uniform = vec![F::one() / F::from_count(v); v];
    let mut state = HdpState {
        hyper,
        vocab_size: v,
        beta: vec![F::one() / F::from_count(k + 1); k + 1],
        theta: vec![uniform.clone(); k],
        topic_words: Vec::new(),
        sub: (0..k)
            .map(|_| SubCluster {
                beta_bar: [F::lit(0.5); 2],
                theta_bar: [uniform.clone(), uniform.clone()],
                words: [vec![], vec![]],
                age: 0,
            })
            .collect(),
        docs,
        iteration: 0,
    };
    state.recount();
    remove_empty_topics(&mut state);
    let init = Streams::new(seed, u64::MAX - 2);
    let all: Vec<usize> = (0..state.k()).collect();
    splitmerge::fresh_subcluster(&mut state, &all, &mut init.global(phase::FRESH));
    sample_m(&mut state, &init);
    sample_beta(&mut state, &mut init.global(phase::BETA));
    sample_pi(&mut state, &init);
    sample_theta(&mut state, &init);
    gibbs::sample_sub_globals(&mut state, &init);
    Ok(state)
}

/// Runs `iters` iterations and calls `hook(iteration, state)` after each; the
/// hook may return a held-out score for the diagnostics.
pub fn run_sampler<F: Real>(
    corpus: &Corpus,
    hyper: HdpHyper<F>,
    cfg: &SamplerConfig,
    hook: impl FnMut(u64, &HdpState<F>) -> Option<f64>,
) -> Result<(HdpState<F>, SamplerDiagnostics), HdpError> {
    if cfg.iters == 0 {
        return Err(HdpError::Invalid("iters must be at least 1".into()));
    }
    let mut state = init_state(corpus, hyper, cfg.k0, cfg.seed)?;
    let mut diag = SamplerDiagnostics::default();
    continue_sampler(&mut state, cfg, cfg.iters, &mut diag, hook)?;
    Ok((state, diag))
}

/// Continues a chain for `iters` more iterations. Random streams are keyed by
/// the iteration number, so a resumed chain matches an uninterrupted one.
pub fn continue_sampler<F: Real>(
    state: &mut HdpState<F>,
    cfg: &SamplerConfig,
    iters: usize,
    diag: &mut SamplerDiagnostics,
    mut hook: impl FnMut(u64, &HdpState<F>) -> Option<f64>,
) -> Result<(), HdpError> {
    state.hyper.validate()?;
    for _ in 0..iters {
        let (splits, merges) = iterate(state, cfg);
        let heldout = hook(state.iteration, state);
        diag.trace.push(IterationStats { iteration: state.iteration, k: state.k(), log_joint: state.log_joint(), splits, merges, heldout });
    }
    Ok(())
}

/// One full iteration; returns accepted (splits, merges).
pub fn iterate<F: Real>(state: &mut HdpState<F>, cfg: &SamplerConfig) -> (usize, usize) {
    let streams = Streams::new(cfg.seed, state.iteration);
    sample_pi(state, &streams);
    sample_theta(state, &streams);
    if cfg.fixed_k {
        sample_z_fixed(state, &mut streams.global(phase::Z));
    } else {
        sample_z(state, &streams);
        remove_empty_topics(state);
    }
    sample_m(state, &streams);
    sample_beta(state, &mut streams.global(phase::BETA));
    for r in 0..cfg.sub_sweeps.max(1) {
        let sub_streams = Streams::new(cfg.seed ^ ((r as u64) << 48), state.iteration);
        sample_subclusters(state, if r == 0 { &streams } else { &sub_streams });
    }
    let mut accepted = (0, 0);
    if cfg.split_merge && !cfg.fixed_k {
        accepted = split_merge_step(state, &streams, cfg);
    }
    state.iteration += 1;
    accepted
}

/// One split proposal per eligible topic, then merges over random disjoint
/// pairs of the topics that were not split.
fn split_merge_step<F: Real>(state: &mut HdpState<F>, streams: &Streams, cfg: &SamplerConfig) -> (usize, usize) {
    let k = state.k();
    let mut split_done = vec![false; k];
    let mut splits = 0;
    for t in 0..k {
        if state.sub[t].age < cfg.min_split_age {
            continue;
        }
        let mut rng = streams.item(phase::SPLIT, t as u64);
        if propose_split(state, t, &mut rng, streams) {
            split_done[t] = true;
            splits += 1;
        } else if cfg.sub_reset_age > 0 && state.sub[t].age >= cfg.sub_reset_age {
            splitmerge::fresh_subcluster(state, &[t], &mut rng);
        }
    }
    let mut candidates: Vec<usize> = (0..k).filter(|&t| !split_done[t]).collect();
    let mut rng = streams.global(phase::MERGE);
    candidates.shuffle(&mut rng);
    let pairs: Vec<(usize, usize)> = candidates.chunks_exact(2).take(k / 2).map(|c| (c[0].min(c[1]), c[0].max(c[1]))).collect();
    let mut accepted: Vec<(usize, usize)> = pairs
        .into_iter()
        .filter(|&(a, b)| {
            let log_h = merge_log_ratio(state, a, b);
            F::sample_open01(&mut rng).f64().ln() < log_h
        })
        .collect();
    // apply from the highest removed index so earlier indices stay valid
    accepted.sort_by_key(|x| std::cmp::Reverse(x.1));
    for &(a, b) in &accepted {
        splitmerge::apply_merge(state, a, b, streams);
    }
    (splits, accepted.len())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::corpus::Document;
    use crate::trips::{generate_corpus_truth, sample_corpus, CorpusConfig, SyntheticCorpusTruth};

    pub fn corpus(docs: Vec<Vec<usize>>, v: usize) -> Corpus {
        Corpus::new(v, docs.into_iter().enumerate().map(|(id, words)| Document { id, words }).collect()).unwrap()
    }

    /// Documents drawing from two disjoint halves of the vocabulary.
    pub fn two_block(seed: u64, n_docs: usize, len: usize) -> Corpus {
        let truth = SyntheticCorpusTruth {
            k_true: 2,
            topics: vec![vec![0.25, 0.25, 0.25, 0.25, 0.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0, 0.0, 0.25, 0.25, 0.25, 0.25]],
            doc_mixtures: (0..n_docs).map(|j| if j % 2 == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] }).collect(),
            doc_sizes: vec![len; n_docs],
        };
        sample_corpus(&truth, seed).unwrap().corpus
    }

    #[test]
    fn k0_one_puts_everything_in_topic_zero() {
        let c = corpus(vec![vec![0, 1, 2], vec![2, 2]], 3);
        let s = init_state::<f64>(&c, HdpHyper::default(), 1, 3).unwrap();
        assert_eq!(s.k(), 1);
        assert!(s.docs.iter().all(|d| d.z.iter().all(|&z| z == 0)));
        assert_eq!(s.docs[0].n, vec![3]);
        s.audit().unwrap();
    }

    #[test]
    fn init_audits_and_differs_by_seed() {
        let c = two_block(1, 10, 20);
        let a = init_state::<f64>(&c, HdpHyper::default(), 4, 1).unwrap();
        let b = init_state::<f64>(&c, HdpHyper::default(), 4, 2).unwrap();
        a.audit().unwrap();
        b.audit().unwrap();
        assert_ne!(a.docs[0].z, b.docs[0].z);
    }

    #[test]
    fn empty_corpus_rejected() {
        let c = corpus(vec![vec![], vec![]], 3);
        assert!(matches!(init_state::<f64>(&c, HdpHyper::default(), 1, 0), Err(HdpError::EmptyCorpus)));
    }

    #[test]
    fn one_iteration_keeps_invariants() {
        let c = two_block(2, 12, 15);
        let cfg = SamplerConfig { iters: 1, ..Default::default() };
        let (s, d) = run_sampler::<f64>(&c, HdpHyper::default(), &cfg, |_, _| None).unwrap();
        s.audit().unwrap();
        assert_eq!(d.trace.len(), 1);
    }

    #[test]
    fn invariants_hold_along_a_chain() {
        let c = two_block(3, 16, 12);
        let cfg = SamplerConfig { iters: 1, min_split_age: 0, ..Default::default() };
        let mut s = init_state::<f64>(&c, HdpHyper::default(), 1, 4).unwrap();
        for _ in 0..60 {
            iterate(&mut s, &cfg);
            s.audit().unwrap();
        }
    }

    #[test]
    fn same_seed_same_trace() {
        let truth = generate_corpus_truth(&CorpusConfig { n_docs: 40, ..Default::default() }, 1).unwrap();
        let c = sample_corpus(&truth, 2).unwrap().corpus;
        let cfg = SamplerConfig { iters: 30, seed: 9, ..Default::default() };
        let (s1, d1) = run_sampler::<f64>(&c, HdpHyper::default(), &cfg, |_, _| None).unwrap();
        let (s2, d2) = run_sampler::<f64>(&c, HdpHyper::default(), &cfg, |_, _| None).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(s1, s2);
    }

    #[test]
    fn resumed_chain_matches() {
        let c = two_block(5, 10, 10);
        let cfg = SamplerConfig { iters: 20, seed: 4, ..Default::default() };
        let (full, _) = run_sampler::<f64>(&c, HdpHyper::default(), &cfg, |_, _| None).unwrap();
        let (mut half, mut diag) =
            run_sampler::<f64>(&c, HdpHyper::default(), &SamplerConfig { iters: 10, ..cfg.clone() }, |_, _| None).unwrap();
        continue_sampler(&mut half, &cfg, 10, &mut diag, |_, _| None).unwrap();
        assert_eq!(half, full);
    }

    #[test]
    fn planted_two_block_corpus_splits() {
        let mut hits = 0;
        for seed in 0..5 {
            let c = two_block(seed, 20, 20);
            let cfg = SamplerConfig { iters: 100, seed, ..Default::default() };
            let (s, _) = run_sampler::<f64>(&c, HdpHyper { gamma: 1.0, alpha: 1.0, lambda: 0.5 }, &cfg, |_, _| None).unwrap();
            if s.k() == 2 {
                hits += 1;
            }
        }
        assert!(hits >= 4, "{hits}/5");
    }

    fn canonical(z: &[Vec<usize>]) -> Vec<usize> {
        let flip = z[0][0] == 1;
        z.iter().flatten().map(|&t| if flip { 1 - t } else { t }).collect()
    }

    #[test]
    fn fixed_k_chain_matches_exact_posterior() {
        use std::collections::HashMap;
        let docs = vec![vec![0, 0, 1], vec![2, 2, 1]];
        let h = HdpHyper { gamma: 1.0, alpha: 1.0, lambda: 0.5 };
        let mut exact: HashMap<Vec<usize>, f64> = HashMap::new();
        for (z, p) in exact::exact_posterior(&docs, 3, &h, 2) {
            *exact.entry(canonical(&z)).or_default() += p;
        }
        let c = corpus(docs, 3);
        let cfg = SamplerConfig { fixed_k: true, seed: 11, ..Default::default() };
        let mut s = init_from_labels::<f64>(&c, h, &[vec![0, 0, 1], vec![1, 1, 1]], 11).unwrap();
        let sweeps = 50_000;
        let mut hist: HashMap<Vec<usize>, f64> = HashMap::new();
        for _ in 0..sweeps {
            iterate(&mut s, &cfg);
            let z: Vec<Vec<usize>> = s.docs.iter().map(|d| d.z.iter().map(|&t| t as usize).collect()).collect();
            *hist.entry(canonical(&z)).or_default() += 1.0 / sweeps as f64;
        }
        let tv: f64 = exact.iter().map(|(k, p)| (p - hist.get(k).copied().unwrap_or(0.0)).abs()).sum::<f64>() / 2.0;
        assert!(tv < 0.05, "total variation {tv}");
    }

    #[test]
    fn f32_chain_runs() {
        let c = two_block(6, 8, 10);
        let cfg = SamplerConfig { iters: 10, ..Default::default() };
        let (s, _) = run_sampler::<f32>(&c, HdpHyper::default(), &cfg, |_, _| None).unwrap();
        assert!(s.k() >= 1);
    }
}
