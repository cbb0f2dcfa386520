//! Held-out predictive evaluation and per-document signal marginals.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Document};
use crate::hdp::HdpState;
use crate::quantize::decode_word;
use crate::real::{sample_categorical, sample_dirichlet, Real};
use crate::stream::Streams;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("split ratio must lie in (0, 1), got {0}")]
    BadRatio(f64),
    #[error("prior must be positive, got {0}")]
    BadPrior(f64),
    #[error("no snapshots to score")]
    NoSnapshots,
    #[error("snapshot has vocabulary {snapshot} and {docs} documents; split has vocabulary {vocab} and {split_docs} documents")]
    Mismatch { snapshot: usize, docs: usize, vocab: usize, split_docs: usize },
    #[error("document {0} is empty")]
    EmptyDocument(usize),
    #[error("document {0} does not exist")]
    NoDocument(usize),
    #[error("word {word} outside a {v_count}x{t_count} vocabulary")]
    BadVocabulary { word: usize, v_count: usize, t_count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocSplit {
    pub id: usize,
    pub obs: Vec<usize>,
    pub ho: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldoutSplit {
    pub vocab_size: usize,
    pub ratio: f64,
    pub seed: u64,
    pub docs: Vec<DocSplit>,
}

impl HeldoutSplit {
    /// The observed halves as a training corpus.
    pub fn observed(&self) -> Corpus {
        let docs = self.docs.iter().map(|d| Document { id: d.id, words: d.obs.clone() }).collect();
        Corpus::new(self.vocab_size, docs).expect("split words come from a valid corpus")
    }

    pub fn heldout_words(&self) -> usize {
        self.docs.iter().map(|d| d.ho.len()).sum()
    }
}

/// Uniform split of every document without replacement. `floor(ratio * N)`
/// words (at least one, at most `N - 1`) are held out; documents with fewer
/// than two words stay observed.
pub fn heldout_split(corpus: &Corpus, ratio: f64, seed: u64) -> Result<HeldoutSplit, EvalError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(EvalError::BadRatio(ratio));
    }
    let streams = Streams::new(seed, 0);
    let docs = corpus
        .docs
        .iter()
        .enumerate()
        .map(|(j, d)| {
            let n = d.words.len();
            if n < 2 {
                return DocSplit { id: d.id, obs: d.words.clone(), ho: Vec::new() };
            }
            let n_ho = ((ratio * n as f64).floor() as usize).clamp(1, n - 1);
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut streams.item(0, j as u64));
            let mut held = vec![false; n];
            idx[..n_ho].iter().for_each(|&i| held[i] = true);
            let (mut obs, mut ho) = (Vec::new(), Vec::new());
            for (i, &w) in d.words.iter().enumerate() {
                if held[i] {
                    ho.push(w)
                } else {
                    obs.push(w)
                }
            }
            DocSplit { id: d.id, obs, ho }
        })
        .collect();
    Ok(HeldoutSplit { vocab_size: corpus.vocab_size, ratio, seed, docs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocScore {
    pub id: usize,
    pub n_obs: usize,
    pub n_ho: usize,
    pub sum_log: f64,
}

impl DocScore {
    pub fn avg(&self) -> Option<f64> {
        (self.n_ho > 0).then(|| self.sum_log / self.n_ho as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveScore {
    /// Mean log predictive probability over all held-out words.
    pub avg_log_pred: f64,
    pub per_doc: Vec<DocScore>,
}

impl PredictiveScore {
    fn from_docs(per_doc: Vec<DocScore>) -> Self {
        let n: usize = per_doc.iter().map(|d| d.n_ho).sum();
        let s: f64 = per_doc.iter().map(|d| d.sum_log).sum();
        Self { avg_log_pred: if n > 0 { s / n as f64 } else { 0.0 }, per_doc }
    }
}

/// Categorical per document with a symmetric Dirichlet prior, fitted to the
/// observed words only.
pub fn baseline_predictive(split: &HeldoutSplit, prior: f64) -> Result<PredictiveScore, EvalError> {
    if !(prior > 0.0 && prior.is_finite()) {
        return Err(EvalError::BadPrior(prior));
    }
    let v = split.vocab_size;
    let per_doc = split
        .docs
        .iter()
        .map(|d| {
            let mut counts = vec![0usize; v];
            d.obs.iter().for_each(|&w| counts[w] += 1);
            let denom = d.obs.len() as f64 + v as f64 * prior;
            let sum_log = d.ho.iter().map(|&w| ((counts[w] as f64 + prior) / denom).ln()).sum();
            DocScore { id: d.id, n_obs: d.obs.len(), n_ho: d.ho.len(), sum_log }
        })
        .collect();
    Ok(PredictiveScore::from_docs(per_doc))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictiveConfig {
    pub burn_in: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for PredictiveConfig {
    fn default() -> Self {
        Self { burn_in: 50, samples: 50, seed: 0 }
    }
}

/// Expected topic proportions of a document given its labels:
/// `(alpha beta_k + n_k) / (alpha + N)`, remainder last.
fn expected_pi<F: Real>(state: &HdpState<F>, n: &[u32]) -> Vec<f64> {
    let a = state.hyper.alpha.f64();
    let total: u32 = n.iter().sum();
    let denom = a + total as f64;
    let k = state.k();
    (0..=k).map(|t| (a * state.beta[t].f64() + if t < k { n[t] as f64 } else { 0.0 }) / denom).collect()
}

/// Word distribution of a document mixture; the remainder contributes the
/// base measure mean `1 / V`.
fn mixture_predictive<F: Real>(state: &HdpState<F>, pi: &[f64]) -> Vec<f64> {
    let v = state.vocab_size;
    let k = state.k();
    let mut p = vec![pi[k] / v as f64; v];
    for t in 0..k {
        for (w, pw) in p.iter_mut().enumerate() {
            *pw += pi[t] * state.theta[t][w].f64();
        }
    }
    p
}

/// Predictive distribution of document `j` after conditioning its labels
/// and proportions on `obs` with the snapshot's globals held fixed.
fn conditioned_predictive<F: Real>(state: &HdpState<F>, j: usize, obs: &[usize], cfg: &PredictiveConfig, snapshot: usize) -> Vec<f64> {
    let k = state.k();
    if obs.is_empty() {
        return mixture_predictive(state, &expected_pi(state, &vec![0; k]));
    }
    let mut rng = Streams::new(cfg.seed, snapshot as u64).item(0, j as u64);
    let alpha = state.hyper.alpha;
    let mut z: Vec<usize> = obs.iter().map(|_| 0).collect();
    let mut n = vec![0u32; k];
    let mut pi: Vec<F> = state.beta.clone();
    let mut w = vec![F::zero(); k];
    let mut draw_z = |pi: &[F], z: &mut Vec<usize>, n: &mut Vec<u32>, rng: &mut _| {
        n.iter_mut().for_each(|c| *c = 0);
        for (i, &x) in obs.iter().enumerate() {
            for t in 0..k {
                w[t] = pi[t] * state.theta[t][x];
            }
            z[i] = sample_categorical(&w, rng);
            n[z[i]] += 1;
        }
    };
    draw_z(&pi, &mut z, &mut n, &mut rng);
    let mut acc = vec![0.0; k + 1];
    for sweep in 0..cfg.burn_in + cfg.samples.max(1) {
        let params: Vec<F> =
            (0..=k).map(|t| alpha * state.beta[t] + if t < k { F::from_count(n[t] as usize) } else { F::zero() }).collect();
        pi = sample_dirichlet(&params, &mut rng);
        draw_z(&pi, &mut z, &mut n, &mut rng);
        if sweep >= cfg.burn_in {
            for (a, e) in acc.iter_mut().zip(expected_pi(state, &n)) {
                *a += e;
            }
        }
    }
    let s: f64 = acc.iter().sum();
    acc.iter_mut().for_each(|a| *a /= s);
    mixture_predictive(state, &acc)
}

/// Held-out score of an HDP: per snapshot and document, local variables are
/// conditioned on the observed words with globals frozen; probabilities are
/// averaged across snapshots before taking the log.
pub fn hdp_predictive<F: Real>(
    snapshots: &[HdpState<F>],
    split: &HeldoutSplit,
    cfg: &PredictiveConfig,
) -> Result<PredictiveScore, EvalError> {
    if snapshots.is_empty() {
        return Err(EvalError::NoSnapshots);
    }
    for s in snapshots {
        if s.vocab_size != split.vocab_size || s.docs.len() != split.docs.len() {
            return Err(EvalError::Mismatch {
                snapshot: s.vocab_size,
                docs: s.docs.len(),
                vocab: split.vocab_size,
                split_docs: split.docs.len(),
            });
        }
    }
    let per_doc = split
        .docs
        .par_iter()
        .enumerate()
        .map(|(j, d)| {
            let mut sum_log = 0.0;
            if !d.ho.is_empty() {
                let mut p = vec![0.0; split.vocab_size];
                for (si, s) in snapshots.iter().enumerate() {
                    for (a, b) in p.iter_mut().zip(conditioned_predictive(s, j, &d.obs, cfg, si)) {
                        *a += b / snapshots.len() as f64;
                    }
                }
                sum_log = d.ho.iter().map(|&w| p[w].ln()).sum();
            }
            DocScore { id: d.id, n_obs: d.obs.len(), n_ho: d.ho.len(), sum_log }
        })
        .collect();
    Ok(PredictiveScore::from_docs(per_doc))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalMarginals {
    /// Velocity and time-of-day bin distributions (counts for empirical
    /// marginals, probabilities for model marginals).
    pub velocity: Vec<f64>,
    pub time: Vec<f64>,
    pub ml_velocity: usize,
    pub ml_time: usize,
}

fn argmax_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn marginals(p: &[f64], v_count: usize, t_count: usize) -> Result<SignalMarginals, EvalError> {
    let mut velocity = vec![0.0; v_count];
    let mut time = vec![0.0; t_count];
    for (w, &x) in p.iter().enumerate() {
        let id = decode_word(w, v_count, t_count).map_err(|_| EvalError::BadVocabulary { word: w, v_count, t_count })?;
        velocity[id.v_bin] += x;
        time[id.t_bin] += x;
    }
    Ok(SignalMarginals { ml_velocity: argmax_lowest(&velocity), ml_time: argmax_lowest(&time), velocity, time })
}

/// Word distribution of document `doc` under its inferred topic mixture.
pub fn doc_predictive<F: Real>(state: &HdpState<F>, doc: usize) -> Result<Vec<f64>, EvalError> {
    let d = state.docs.get(doc).ok_or(EvalError::NoDocument(doc))?;
    Ok(mixture_predictive(state, &expected_pi(state, &d.n)))
}

/// Maximum-likelihood velocity and time-of-day bins of one document under
/// the model; ties go to the lowest bin.
pub fn ml_marginals<F: Real>(state: &HdpState<F>, v_count: usize, t_count: usize, doc: usize) -> Result<SignalMarginals, EvalError> {
    marginals(&doc_predictive(state, doc)?, v_count, t_count)
}

/// Histograms of the velocity and time-of-day bins of a document's words.
pub fn empirical_marginals(corpus: &Corpus, v_count: usize, t_count: usize, doc: usize) -> Result<SignalMarginals, EvalError> {
    let d = corpus.docs.get(doc).ok_or(EvalError::NoDocument(doc))?;
    if d.words.is_empty() {
        return Err(EvalError::EmptyDocument(doc));
    }
    let mut counts = vec![0.0; v_count * t_count];
    for &w in &d.words {
        *counts.get_mut(w).ok_or(EvalError::BadVocabulary { word: w, v_count, t_count })? += 1.0;
    }
    marginals(&counts, v_count, t_count)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub hdp: f64,
    pub baseline: f64,
    pub heldout_words: usize,
    pub scored_docs: usize,
    pub snapshots: usize,
}

pub fn summarize(hdp: &PredictiveScore, baseline: &PredictiveScore, snapshots: usize) -> EvalSummary {
    EvalSummary {
        hdp: hdp.avg_log_pred,
        baseline: baseline.avg_log_pred,
        heldout_words: hdp.per_doc.iter().map(|d| d.n_ho).sum(),
        scored_docs: hdp.per_doc.iter().filter(|d| d.n_ho > 0).count(),
        snapshots,
    }
}

/// One row per document: id, word counts and both average scores (empty
/// when nothing is held out).
pub fn scores_csv(hdp: &PredictiveScore, baseline: &PredictiveScore) -> String {
    let mut out = String::from("doc_id,n_obs,n_ho,avg_log_pred_hdp,avg_log_pred_baseline\n");
    let fmt = |x: Option<f64>| x.map(|v| format!("{v:.10}")).unwrap_or_default();
    for (h, b) in hdp.per_doc.iter().zip(&baseline.per_doc) {
        out.push_str(&format!("{},{},{},{},{}\n", h.id, h.n_obs, h.n_ho, fmt(h.avg()), fmt(b.avg())));
    }
    out
}
