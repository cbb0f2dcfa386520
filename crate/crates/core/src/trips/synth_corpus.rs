//! Planted topic corpora with power-law document sizes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TripError;
use crate::corpus::{Corpus, Document};
use crate::real::{sample_categorical, sample_dirichlet};
use crate::stream::seeded;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub k_true: usize,
    pub vocab_size: usize,
    pub n_docs: usize,
    /// Symmetric Dirichlet concentration of each planted topic.
    pub topic_concentration: f64,
    /// Symmetric Dirichlet concentration of the global topic weights.
    pub global_concentration: f64,
    /// Document mixtures are drawn from Dirichlet(doc_concentration * global
    /// weights), the document level of an HDP with these weights.
    pub doc_concentration: f64,
    pub size_exponent: f64,
    pub min_size: usize,
    pub max_size: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            k_true: 10,
            vocab_size: 50,
            n_docs: 200,
            topic_concentration: 0.1,
            global_concentration: 5.0,
            doc_concentration: 0.1,
            size_exponent: 1.5,
            min_size: 3,
            max_size: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpusTruth {
    pub k_true: usize,
    /// `k_true` distributions over the vocabulary.
    pub topics: Vec<Vec<f64>>,
    /// Per-document distributions over topics.
    pub doc_mixtures: Vec<Vec<f64>>,
    pub doc_sizes: Vec<usize>,
}

impl SyntheticCorpusTruth {
    pub fn vocab_size(&self) -> usize {
        self.topics.first().map_or(0, Vec::len)
    }
}

/// A sampled corpus together with the planted topic of every word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedCorpus {
    pub corpus: Corpus,
    pub labels: Vec<Vec<usize>>,
}

pub fn generate_corpus_truth(config: &CorpusConfig, seed: u64) -> Result<SyntheticCorpusTruth, TripError> {
    let c = config;
    if c.k_true == 0 || c.vocab_size < 2 || c.n_docs == 0 || c.min_size == 0 || c.max_size < c.min_size {
        return Err(TripError::Config("invalid corpus configuration".into()));
    }
    if !(c.size_exponent > 1.0) {
        return Err(TripError::Config("size exponent must exceed 1".into()));
    }
    let mut rng = seeded(seed);
    let topics: Vec<Vec<f64>> = (0..c.k_true).map(|_| sample_dirichlet(&vec![c.topic_concentration; c.vocab_size], &mut rng)).collect();
    let global = sample_dirichlet(&vec![c.global_concentration; c.k_true], &mut rng);
    let doc_params: Vec<f64> = global.iter().map(|g| (c.doc_concentration * g).max(1e-6)).collect();
    let doc_mixtures = (0..c.n_docs).map(|_| sample_dirichlet(&doc_params, &mut rng)).collect();
    // Pareto tail: P(size > s) ~ s^(1 - exponent)
    let doc_sizes = (0..c.n_docs)
        .map(|_| {
            let u: f64 = 1.0 - rng.random::<f64>();
            let s = c.min_size as f64 * u.powf(-1.0 / (c.size_exponent - 1.0));
            (s.floor() as usize).clamp(c.min_size, c.max_size)
        })
        .collect();
    Ok(SyntheticCorpusTruth { k_true: c.k_true, topics, doc_mixtures, doc_sizes })
}

pub fn sample_corpus(truth: &SyntheticCorpusTruth, seed: u64) -> Result<PlantedCorpus, TripError> {
    let v = truth.vocab_size();
    if v < 2 {
        return Err(TripError::Config("vocabulary size must be at least 2".into()));
    }
    if truth.doc_mixtures.len() != truth.doc_sizes.len() {
        return Err(TripError::Config("mixture and size counts differ".into()));
    }
    let mut rng = seeded(seed);
    let mut docs = Vec::with_capacity(truth.doc_sizes.len());
    let mut labels = Vec::with_capacity(truth.doc_sizes.len());
    for (d, (&size, mix)) in truth.doc_sizes.iter().zip(&truth.doc_mixtures).enumerate() {
        let mut words = Vec::with_capacity(size);
        let mut doc_labels = Vec::with_capacity(size);
        for _ in 0..size {
            let k = sample_categorical(mix, &mut rng);
            words.push(sample_categorical(&truth.topics[k], &mut rng));
            doc_labels.push(k);
        }
        docs.push(Document { id: d, words });
        labels.push(doc_labels);
    }
    let corpus = Corpus::new(v, docs).map_err(|e| TripError::Config(e.to_string()))?;
    Ok(PlantedCorpus { corpus, labels })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_topic_docs_converge_to_topic() {
        let truth = SyntheticCorpusTruth {
            k_true: 1,
            topics: vec![vec![0.5, 0.3, 0.2]],
            doc_mixtures: vec![vec![1.0]; 2],
            doc_sizes: vec![20_000, 20_000],
        };
        let pc = sample_corpus(&truth, 1).unwrap();
        for d in 0..2 {
            let h = pc.corpus.histogram(d);
            for (w, &p) in truth.topics[0].iter().enumerate() {
                assert!((h[w] as f64 / 20_000.0 - p).abs() < 0.015);
            }
        }
    }

    #[test]
    fn disjoint_pure_documents_pass_chi_square() {
        let truth = SyntheticCorpusTruth {
            k_true: 2,
            topics: vec![vec![0.6, 0.4, 0.0, 0.0], vec![0.0, 0.0, 0.25, 0.75]],
            doc_mixtures: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            doc_sizes: vec![2000, 2000],
        };
        let pc = sample_corpus(&truth, 9).unwrap();
        for d in 0..2 {
            let h = pc.corpus.histogram(d);
            let topic = &truth.topics[d];
            let mut chi2 = 0.0;
            for (w, &p) in topic.iter().enumerate() {
                if p == 0.0 {
                    assert_eq!(h[w], 0);
                } else {
                    let e = 2000.0 * p;
                    chi2 += (h[w] as f64 - e).powi(2) / e;
                }
            }
            // one degree of freedom, 99.9% quantile
            assert!(chi2 < 10.83, "chi2 = {chi2}");
        }
    }

    #[test]
    fn explicit_sizes_are_respected() {
        let truth = SyntheticCorpusTruth {
            k_true: 1,
            topics: vec![vec![0.5, 0.5]],
            doc_mixtures: vec![vec![1.0]; 4],
            doc_sizes: vec![1000, 5, 5, 5],
        };
        let pc = sample_corpus(&truth, 2).unwrap();
        assert_eq!(pc.corpus.num_words(), 1015);
    }

    #[test]
    fn generated_truth_is_normalized_and_imbalanced() {
        let truth = generate_corpus_truth(&CorpusConfig::default(), 5).unwrap();
        for t in truth.topics.iter().chain(&truth.doc_mixtures) {
            assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let small = truth.doc_sizes.iter().filter(|&&s| s < 5).count();
        let big = truth.doc_sizes.iter().copied().max().unwrap();
        assert!(small > 40, "expected many tiny documents, got {small}");
        assert!(big > 100);
        assert!(truth.doc_sizes.iter().all(|&s| s >= 3));
    }
}
