//! Tokenization, rule-based entity tagging, vocabularies and frozen word
//! embeddings.

mod embeddings;
mod vocab;

pub use embeddings::{fallback_vector, EmbeddingTable, GloveFile};
pub use vocab::{TokenId, Vocab, BOS, ENT, EOS, NUM, PAD, SPECIALS, UNK};

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Token {
    /// Lowercased surface form.
    pub surface: String,
    /// Whether the word started with an uppercase letter before lowercasing.
    pub capitalized: bool,
}

impl Token {
    pub fn new(surface: impl Into<String>) -> Self {
        Self {
            surface: surface.into(),
            capitalized: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Sentence {
    pub tokens: Vec<Token>,
}

impl Sentence {
    /// Builds a sentence from already-tokenized surface forms.
    pub fn from_surfaces<S: AsRef<str>>(surfaces: impl IntoIterator<Item = S>) -> Self {
        Self {
            tokens: surfaces
                .into_iter()
                .map(|s| Token::new(s.as_ref()))
                .collect(),
        }
    }

    /// Parses a space-separated token line, as written by [`fmt::Display`].
    pub fn parse_tokens(line: &str) -> Result<Self> {
        let s = Self::from_surfaces(line.split_whitespace());
        if s.is_empty() {
            return Err(Error::EmptyInput("token line"));
        }
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.surface.as_str())
    }

    /// Same tokens, in order, ignoring capitalization flags.
    pub fn same_surfaces(&self, other: &Sentence) -> bool {
        self.len() == other.len() && self.surfaces().eq(other.surfaces())
    }
}

impl fmt::Display for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.tokens.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            f.write_str(&t.surface)?;
        }
        Ok(())
    }
}

fn is_number_joiner(c: char) -> bool {
    c == '.' || c == ','
}

/// Lowercases and splits on whitespace and punctuation. Every
/// non-alphanumeric, non-space character becomes its own token, except a
/// `.` or `,` between two digits, which stays inside the number. Special
/// tokens written out literally (`<num>`, `<ent>`, ...) stay whole.
pub fn tokenize(text: &str) -> Result<Sentence> {
    if text.trim().is_empty() {
        return Err(Error::EmptyInput("text"));
    }
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut word = String::new();
    let mut capitalized = false;

    let flush = |word: &mut String, capitalized: &mut bool, tokens: &mut Vec<Token>| {
        if !word.is_empty() {
            tokens.push(Token {
                surface: std::mem::take(word),
                capitalized: *capitalized,
            });
        }
        *capitalized = false;
    };

    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if let Some(tag) = special_at(&chars[i..]) {
            flush(&mut word, &mut capitalized, &mut tokens);
            tokens.push(Token::new(tag));
            i += tag.chars().count();
            continue;
        }
        if c.is_whitespace() {
            flush(&mut word, &mut capitalized, &mut tokens);
        } else if c.is_alphanumeric() {
            if word.is_empty() {
                capitalized = c.is_uppercase();
            }
            word.extend(c.to_lowercase());
        } else if is_number_joiner(c)
            && word.chars().last().is_some_and(|p| p.is_ascii_digit())
            && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit())
        {
            word.push(c);
        } else {
            flush(&mut word, &mut capitalized, &mut tokens);
            tokens.push(Token::new(c.to_string()));
        }
        i += 1;
    }
    flush(&mut word, &mut capitalized, &mut tokens);
    Ok(Sentence { tokens })
}

/// A special token such as `<ent>` spelled out at the start of `rest`, so
/// already-processed text tokenizes to the same tokens again.
fn special_at(rest: &[char]) -> Option<&'static str> {
    if rest.first() != Some(&'<') {
        return None;
    }
    SPECIALS.iter().copied().find(|sp| {
        let n = sp.chars().count();
        rest.len() >= n && rest[..n].iter().copied().eq(sp.chars())
    })
}

fn is_numeric(surface: &str) -> bool {
    surface.starts_with(|c: char| c.is_ascii_digit())
        && surface
            .chars()
            .all(|c| c.is_ascii_digit() || is_number_joiner(c))
}

fn ends_sentence(surface: &str) -> bool {
    matches!(surface, "." | "!" | "?")
}

/// Replaces numbers with `<num>` and capitalized runs with one `<ent>`.
///
/// A run of capitalized words is an entity unless it is a single word at
/// the start of a sentence. The pronoun "I" never counts as capitalized.
pub fn tag_entities(s: &Sentence) -> Sentence {
    let toks = &s.tokens;
    let mut out = Vec::with_capacity(toks.len());
    let mut i = 0;
    while i < toks.len() {
        let t = &toks[i];
        if is_numeric(&t.surface) {
            out.push(Token::new(SPECIALS[NUM]));
            i += 1;
            continue;
        }
        let cap = |t: &Token| t.capitalized && t.surface != "i";
        if cap(t) {
            let start = i;
            while i < toks.len() && cap(&toks[i]) && !is_numeric(&toks[i].surface) {
                i += 1;
            }
            let at_sentence_start = start == 0 || ends_sentence(&toks[start - 1].surface);
            if i - start >= 2 || !at_sentence_start {
                out.push(Token::new(SPECIALS[ENT]));
            } else {
                out.extend(toks[start..i].iter().cloned());
            }
            continue;
        }
        out.push(t.clone());
        i += 1;
    }
    Sentence { tokens: out }
}

/// Tokenize then tag, the preprocessing every corpus line goes through.
pub fn preprocess(text: &str) -> Result<Sentence> {
    Ok(tag_entities(&tokenize(text)?))
}
