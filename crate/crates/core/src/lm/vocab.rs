//! Character-level tokenization: the vocabulary is the sorted set of unique
//! characters in the corpus, so it is deterministic regardless of the order
//! characters first appear.

use crate::error::{Error, Result};
use std::collections::BTreeSet;

#[derive(Debug, Clone)]
pub struct CharVocab {
    chars: Vec<char>,
    index: std::collections::HashMap<char, usize>,
}

impl CharVocab {
    pub fn new(text: &str) -> Result<Self> {
        if text.is_empty() {
            return Err(Error::invalid_input("char_vocab: empty text"));
        }
        let chars: Vec<char> = text.chars().collect::<BTreeSet<_>>().into_iter().collect();
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        Ok(CharVocab { chars, index })
    }

    pub fn vocab_size(&self) -> usize {
        self.chars.len()
    }

    /// Maps text to token ids; errors on characters outside the vocabulary.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| {
                self.index.get(&c).copied().ok_or_else(|| {
                    Error::invalid_input(format!("char_vocab: {c:?} not in vocabulary"))
                })
            })
            .collect()
    }

    /// Maps token ids back to text; errors on out-of-range ids.
    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        ids.iter()
            .map(|&id| {
                self.chars.get(id).copied().ok_or_else(|| {
                    Error::invalid_input(format!(
                        "char_vocab: id {id} out of range for vocab of {}",
                        self.chars.len()
                    ))
                })
            })
            .collect()
    }
}
