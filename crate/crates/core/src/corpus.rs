//! Bag-of-words corpus over a product vocabulary.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CorpusError {
    #[error("document {doc} holds word {word} outside vocabulary of size {vocab_size}")]
    WordOutOfRange { doc: usize, word: usize, vocab_size: usize },
    #[error("vocabulary size must be positive")]
    EmptyVocabulary,
}

/// One road segment's bag of quantized signal words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    /// Road-segment index this document belongs to.
    pub id: usize,
    /// Flat word ids. Order carries no meaning.
    pub words: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub vocab_size: usize,
    pub docs: Vec<Document>,
}

impl Corpus {
    pub fn new(vocab_size: usize, docs: Vec<Document>) -> Result<Self, CorpusError> {
        let corpus = Self { vocab_size, docs };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.vocab_size == 0 {
            return Err(CorpusError::EmptyVocabulary);
        }
        for (d, doc) in self.docs.iter().enumerate() {
            if let Some(&w) = doc.words.iter().find(|&&w| w >= self.vocab_size) {
                return Err(CorpusError::WordOutOfRange { doc: d, word: w, vocab_size: self.vocab_size });
            }
        }
        Ok(())
    }

    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn num_words(&self) -> usize {
        self.docs.iter().map(|d| d.words.len()).sum()
    }

    pub fn non_empty_docs(&self) -> usize {
        self.docs.iter().filter(|d| !d.words.is_empty()).count()
    }

    /// Word histogram of one document.
    pub fn histogram(&self, doc: usize) -> Vec<usize> {
        let mut h = vec![0; self.vocab_size];
        for &w in &self.docs[doc].words {
            h[w] += 1;
        }
        h
    }
}
