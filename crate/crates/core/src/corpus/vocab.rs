use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::Sentence;
use crate::error::{Error, Result};

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;
pub const NUM: TokenId = 4;
pub const ENT: TokenId = 5;

/// Reserved tokens, in id order. They occupy the first ids of every
/// vocabulary.
pub const SPECIALS: [&str; 6] = ["<pad>", "<bos>", "<eos>", "<unk>", "<num>", "<ent>"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::from_words(std::iter::empty::<&str>()).expect("specials are distinct")
    }
}

impl Vocab {
    /// Specials followed by `words`, in the given order.
    pub fn from_words<S: AsRef<str>>(words: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut v = Self {
            words: Vec::new(),
            index: HashMap::new(),
        };
        for w in SPECIALS.iter().copied() {
            v.push(w)?;
        }
        for w in words {
            v.push(w.as_ref())?;
        }
        Ok(v)
    }

    /// Every word of the corpus, most frequent first, ties broken
    /// lexicographically.
    pub fn build<'a>(sentences: impl IntoIterator<Item = &'a Sentence>) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in sentences {
            for w in s.surfaces() {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut words: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(w, _)| !SPECIALS.contains(w))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        Self::from_words(words.into_iter().map(|(w, _)| w)).expect("counted words are distinct")
    }

    pub(crate) fn push(&mut self, word: &str) -> Result<TokenId> {
        if self.index.contains_key(word) {
            return Err(Error::DuplicateWord(word.to_string()));
        }
        let id = self.words.len();
        self.words.push(word.to_string());
        self.index.insert(word.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    /// Id of `word`, or [`UNK`].
    pub fn id(&self, word: &str) -> TokenId {
        self.get(word).unwrap_or(UNK)
    }

    pub fn word(&self, id: TokenId) -> &str {
        &self.words[id]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn encode(&self, s: &Sentence) -> Vec<TokenId> {
        s.surfaces().map(|w| self.id(w)).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Sentence {
        Sentence::from_surfaces(ids.iter().map(|&i| self.word(i)))
    }

    /// One non-special token per line; line `n` (0-based) has id
    /// `n + SPECIALS.len()`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = String::new();
        for w in &self.words[SPECIALS.len()..] {
            text.push_str(w);
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut words = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let w = line.trim();
            if w.is_empty() || w.contains(char::is_whitespace) {
                return Err(Error::format(n + 1, "expected exactly one token"));
            }
            words.push(w);
        }
        Self::from_words(words)
    }
}
