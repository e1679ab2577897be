#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sentedit_core::corpus::{EmbeddingTable, GloveFile, Sentence, Vocab};
use sentedit_core::seqmodel::{ModelConfig, ModelState};
use sentedit_core::tensor::Real;

pub const WORDS: [&str; 12] = [
    "the", "food", "was", "great", "cold", "staff", "were", "rude", "kind", "and", "soup", ".",
];

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_heads: 2,
        n_layers_enc: 1,
        n_layers_dec: 1,
        d_ffn: 12,
        max_len: 12,
        dropout: 0.0,
        d_edit: 4,
        kappa: 50.0,
        epsilon: 0.5,
        norm_max: 50.0,
    }
}

/// Random word vectors for `words`, GloVe text format.
pub fn glove_text(words: &[&str], dim: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    for w in words {
        out.push_str(w);
        for _ in 0..dim {
            out.push_str(&format!(" {:.4}", rng.random_range(-1.0..1.0)));
        }
        out.push('\n');
    }
    out
}

pub fn tiny_glove() -> GloveFile {
    GloveFile::parse(&glove_text(&WORDS, 6, 11)).unwrap()
}

pub fn tiny_vocab() -> Vocab {
    Vocab::from_words(WORDS).unwrap()
}

pub fn tiny_model<T: Real>(seed: u64) -> ModelState<T> {
    let table = EmbeddingTable::from_glove(&tiny_glove(), tiny_vocab(), 0);
    ModelState::new(tiny_config(), table, seed).unwrap()
}

pub fn sentence(text: &str) -> Sentence {
    Sentence::from_surfaces(text.split_whitespace())
}

pub fn ids(vocab: &Vocab, text: &str) -> Vec<usize> {
    vocab.encode(&sentence(text))
}
