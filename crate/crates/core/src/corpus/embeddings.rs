use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::vocab::{TokenId, Vocab, PAD};
use crate::error::{Error, Result};

/// Contents of a GloVe-style text file: `word v1 ... v_dim` per line.
#[derive(Clone, Debug)]
pub struct GloveFile {
    pub dim: usize,
    pub vectors: HashMap<String, Vec<f32>>,
    /// Mean L2 norm over every row of the file.
    pub mean_norm: f32,
}

impl GloveFile {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut dim = None;
        let mut vectors = HashMap::new();
        let mut norm_sum = 0.0f64;
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            let mut fields = line.split_whitespace();
            let Some(word) = fields.next() else { continue };
            let values = fields
                .map(|f| {
                    f.parse::<f32>()
                        .map_err(|_| Error::format(line_no, format!("bad number {f:?}")))
                })
                .collect::<Result<Vec<f32>>>()?;
            if values.is_empty() {
                return Err(Error::format(line_no, "word without a vector"));
            }
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(Error::format(
                        line_no,
                        format!("expected {d} values, found {}", values.len()),
                    ))
                }
                Some(_) => {}
            }
            norm_sum += values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            vectors.insert(word.to_string(), values);
        }
        let dim = dim.ok_or(Error::EmptyInput("embedding file"))?;
        let mean_norm = (norm_sum / vectors.len() as f64) as f32;
        Ok(Self {
            dim,
            vectors,
            mean_norm,
        })
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Seeded random vector for a word with no pre-trained embedding: a
/// Gaussian direction scaled to `norm`. Depends only on `(word, seed)`.
pub fn fallback_vector(word: &str, seed: u64, dim: usize, norm: f32) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(word.as_bytes()));
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let len = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter().map(|x| (x / len * norm as f64) as f32).collect()
}

/// Frozen word vectors indexed by token id.
///
/// Rows are only ever appended; an existing row never changes after
/// construction.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vocab: Vocab,
    data: Vec<f32>,
    frozen: Vec<bool>,
    fill_norm: f32,
    seed: u64,
}

impl EmbeddingTable {
    /// Reads a GloVe file and keeps rows for `vocab`.
    pub fn load(path: impl AsRef<Path>, vocab: Vocab, seed: u64) -> Result<Self> {
        let glove = GloveFile::read(path)?;
        Ok(Self::from_glove(&glove, vocab, seed))
    }

    /// Rows for every vocabulary word; words missing from `glove` get
    /// [`fallback_vector`]s at the file's mean norm. `<pad>` is all zeros.
    pub fn from_glove(glove: &GloveFile, vocab: Vocab, seed: u64) -> Self {
        let dim = glove.dim;
        let mut data = Vec::with_capacity(vocab.len() * dim);
        for (id, w) in vocab.words().iter().enumerate() {
            if id == PAD {
                data.extend(std::iter::repeat_n(0.0, dim));
            } else if let Some(v) = glove.vectors.get(w) {
                data.extend_from_slice(v);
            } else {
                data.extend(fallback_vector(w, seed, dim, glove.mean_norm));
            }
        }
        let frozen = vec![true; vocab.len()];
        Self {
            dim,
            vocab,
            data,
            frozen,
            fill_norm: glove.mean_norm,
            seed,
        }
    }

    /// Rebuilds a table from raw parts (checkpoint loading).
    pub fn from_parts(vocab: Vocab, dim: usize, data: Vec<f32>, fill_norm: f32, seed: u64) -> Result<Self> {
        if data.len() != vocab.len() * dim {
            return Err(Error::DimMismatch {
                expected: vocab.len() * dim,
                actual: data.len(),
            });
        }
        let frozen = vec![true; vocab.len()];
        Ok(Self {
            dim,
            vocab,
            data,
            frozen,
            fill_norm,
            seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn fill_norm(&self) -> f32 {
        self.fill_norm
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn row(&self, id: TokenId) -> &[f32] {
        &self.data[id * self.dim..(id + 1) * self.dim]
    }

    pub fn is_frozen(&self, id: TokenId) -> bool {
        self.frozen[id]
    }

    /// Appends new rows. Validates everything first, so on error the table
    /// is untouched.
    pub fn inject_oov(&mut self, new_words: &[(String, Vec<f32>)]) -> Result<Vec<TokenId>> {
        let mut seen = std::collections::HashSet::new();
        for (w, v) in new_words {
            if v.len() != self.dim {
                return Err(Error::DimMismatch {
                    expected: self.dim,
                    actual: v.len(),
                });
            }
            if self.vocab.contains(w) || !seen.insert(w.as_str()) {
                return Err(Error::DuplicateWord(w.clone()));
            }
        }
        let mut ids = Vec::with_capacity(new_words.len());
        for (w, v) in new_words {
            ids.push(self.vocab.push(w)?);
            self.data.extend_from_slice(v);
            self.frozen.push(true);
        }
        Ok(ids)
    }

    /// Injects every word of `words` not yet in the table, taking vectors
    /// from `source` when it has them and seeded fallbacks otherwise.
    pub fn inject_missing<'a>(
        &mut self,
        words: impl IntoIterator<Item = &'a str>,
        source: Option<&GloveFile>,
    ) -> Result<Vec<TokenId>> {
        let mut pending: Vec<(String, Vec<f32>)> = Vec::new();
        let mut queued = std::collections::HashSet::new();
        for w in words {
            if self.vocab.contains(w) || !queued.insert(w.to_string()) {
                continue;
            }
            let v = source
                .and_then(|g| g.vectors.get(w))
                .filter(|v| v.len() == self.dim)
                .cloned()
                .unwrap_or_else(|| fallback_vector(w, self.seed, self.dim, self.fill_norm));
            pending.push((w.to_string(), v));
        }
        self.inject_oov(&pending)
    }

    /// FNV-1a over the bit patterns of every frozen row.
    pub fn frozen_hash(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        for id in 0..self.len() {
            if self.frozen[id] {
                for v in self.row(id) {
                    bytes.extend_from_slice(&v.to_bits().to_le_bytes());
                }
            }
        }
        fnv1a(&bytes)
    }
}
