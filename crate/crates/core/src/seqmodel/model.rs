use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{EmbeddingTable, GloveFile, TokenId};
use crate::editvae::{EditAdapter, EditVaeConfig};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Shape of the encoder-decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub n_layers_enc: usize,
    pub n_layers_dec: usize,
    pub d_ffn: usize,
    pub max_len: usize,
    pub dropout_rate: f64,
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_k", self.d_k),
            ("d_v", self.d_v),
            ("n_layers_enc", self.n_layers_enc),
            ("n_layers_dec", self.n_layers_dec),
            ("d_ffn", self.d_ffn),
            ("max_len", self.max_len),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.n_heads * self.d_k != self.d_model || self.n_heads * self.d_v != self.d_model {
            return Err(Error::Config(format!(
                "d_model ({}) must equal n_heads ({}) x d_k ({}) = n_heads x d_v ({})",
                self.d_model, self.n_heads, self.d_k, self.d_v
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }
}

/// Every architecture knob of a model, as stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers_enc: usize,
    pub n_layers_dec: usize,
    pub d_ffn: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub d_edit: usize,
    pub kappa: f64,
    pub epsilon: f64,
    pub norm_max: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            n_heads: 4,
            n_layers_enc: 2,
            n_layers_dec: 2,
            d_ffn: 512,
            max_len: 64,
            dropout: 0.1,
            d_edit: 128,
            kappa: 30.0,
            epsilon: 1.0,
            norm_max: 10.0,
        }
    }
}

impl ModelConfig {
    pub fn transformer(&self) -> TransformerConfig {
        let d_k = if self.n_heads == 0 { 0 } else { self.d_model / self.n_heads };
        TransformerConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            d_k,
            d_v: d_k,
            n_layers_enc: self.n_layers_enc,
            n_layers_dec: self.n_layers_dec,
            d_ffn: self.d_ffn,
            max_len: self.max_len,
            dropout_rate: self.dropout,
        }
    }

    pub fn edit(&self) -> EditVaeConfig {
        EditVaeConfig {
            d_edit: self.d_edit,
            kappa: self.kappa,
            epsilon: self.epsilon,
            norm_max: self.norm_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.transformer().validate()?;
        self.edit().validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named trainable tensors in declaration order. The order is the
/// checkpoint order and the gradient order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    fn add(&mut self, name: String, t: Tensor<T>) -> ParamId {
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct AttentionParams {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct FeedForward {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct EncoderLayer {
    pub ln1: Norm,
    pub attn: AttentionParams,
    pub ln2: Norm,
    pub ffn: FeedForward,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct DecoderLayer {
    pub ln1: Norm,
    pub self_attn: AttentionParams,
    pub ln2: Norm,
    pub cross_attn: AttentionParams,
    pub ln3: Norm,
    pub ffn: FeedForward,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Stack<L> {
    /// Projection from embedding width to `d_model`: (weight, bias).
    pub input: (ParamId, ParamId),
    pub layers: Vec<L>,
    pub final_norm: Norm,
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn xavier<T: Real>(&mut self, rows: usize, cols: usize) -> Tensor<T> {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| T::from_f64(self.rng.random_range(-limit..limit)))
            .collect();
        Tensor::from_vec(rows, cols, data)
    }
}

struct Builder<'a, T: Real> {
    store: &'a mut ParamStore<T>,
    init: Init,
}

impl<T: Real> Builder<'_, T> {
    fn weight(&mut self, name: String, rows: usize, cols: usize) -> ParamId {
        let t = self.init.xavier(rows, cols);
        self.store.add(name, t)
    }

    fn zeros(&mut self, name: String, cols: usize) -> ParamId {
        self.store.add(name, Tensor::zeros(1, cols))
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> (ParamId, ParamId) {
        (
            self.weight(format!("{name}.w"), fan_in, fan_out),
            self.zeros(format!("{name}.b"), fan_out),
        )
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            gain: self.store.add(format!("{name}.g"), Tensor::filled(1, d, T::one())),
            bias: self.zeros(format!("{name}.b"), d),
        }
    }

    fn attention(&mut self, name: &str, d: usize) -> AttentionParams {
        let (wq, bq) = self.linear(&format!("{name}.q"), d, d);
        let (wk, bk) = self.linear(&format!("{name}.k"), d, d);
        let (wv, bv) = self.linear(&format!("{name}.v"), d, d);
        let (wo, bo) = self.linear(&format!("{name}.o"), d, d);
        AttentionParams {
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
        }
    }

    fn ffn(&mut self, name: &str, d: usize, hidden: usize) -> FeedForward {
        let (w1, b1) = self.linear(&format!("{name}.1"), d, hidden);
        let (w2, b2) = self.linear(&format!("{name}.2"), hidden, d);
        FeedForward { w1, b1, w2, b2 }
    }
}

/// A complete editor: transformer, generator, edit adapter and the frozen
/// embedding table they read.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState<T: Real> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub(crate) encoder: Stack<EncoderLayer>,
    pub(crate) decoder: Stack<DecoderLayer>,
    /// Projection of `[out; z]` (width `d_model + d_edit`) into embedding
    /// space.
    pub(crate) generator: (ParamId, ParamId),
    pub adapter: EditAdapter,
    pub(crate) embeddings: EmbeddingTable,
    emb_cache: Tensor<T>,
}

impl<T: Real> ModelState<T> {
    /// Freshly initialized model. Parameters are declared, and stored, in
    /// the order: encoder, decoder, generator, edit adapter.
    pub fn new(config: ModelConfig, embeddings: EmbeddingTable, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let d_emb = embeddings.dim();
        let mut params = ParamStore::new();
        let mut b = Builder {
            store: &mut params,
            init: Init {
                rng: ChaCha8Rng::seed_from_u64(seed),
            },
        };

        let encoder = Stack {
            input: b.linear("enc.in", d_emb, d),
            layers: (0..config.n_layers_enc)
                .map(|i| EncoderLayer {
                    ln1: b.norm(&format!("enc.{i}.ln1"), d),
                    attn: b.attention(&format!("enc.{i}.attn"), d),
                    ln2: b.norm(&format!("enc.{i}.ln2"), d),
                    ffn: b.ffn(&format!("enc.{i}.ffn"), d, config.d_ffn),
                })
                .collect(),
            final_norm: b.norm("enc.ln", d),
        };
        let decoder = Stack {
            input: b.linear("dec.in", d_emb, d),
            layers: (0..config.n_layers_dec)
                .map(|i| DecoderLayer {
                    ln1: b.norm(&format!("dec.{i}.ln1"), d),
                    self_attn: b.attention(&format!("dec.{i}.self"), d),
                    ln2: b.norm(&format!("dec.{i}.ln2"), d),
                    cross_attn: b.attention(&format!("dec.{i}.cross"), d),
                    ln3: b.norm(&format!("dec.{i}.ln3"), d),
                    ffn: b.ffn(&format!("dec.{i}.ffn"), d, config.d_ffn),
                })
                .collect(),
            final_norm: b.norm("dec.ln", d),
        };
        let generator = b.linear("gen", d + config.d_edit, d_emb);
        let (weight, bias) = b.linear("edit", 2 * d_emb, config.d_edit);
        let adapter = EditAdapter { weight, bias };

        let emb_cache = table_tensor(&embeddings);
        Ok(Self {
            config,
            params,
            encoder,
            decoder,
            generator,
            adapter,
            embeddings,
            emb_cache,
        })
    }

    pub fn embeddings(&self) -> &EmbeddingTable {
        &self.embeddings
    }

    /// The embedding table as a `vocab × d_emb` matrix.
    pub fn embedding_matrix(&self) -> Tensor<T> {
        self.emb_cache.clone()
    }

    pub fn vocab_size(&self) -> usize {
        self.embeddings.len()
    }

    pub fn generator_input_width(&self) -> usize {
        self.params.get(self.generator.0).rows()
    }

    /// Appends embedding rows for unseen words; see
    /// [`EmbeddingTable::inject_oov`].
    pub fn inject_oov(&mut self, new_words: &[(String, Vec<f32>)]) -> Result<Vec<TokenId>> {
        let ids = self.embeddings.inject_oov(new_words)?;
        self.emb_cache = table_tensor(&self.embeddings);
        Ok(ids)
    }

    /// Injects every unknown word of `words`; see
    /// [`EmbeddingTable::inject_missing`].
    pub fn inject_missing<'a>(
        &mut self,
        words: impl IntoIterator<Item = &'a str>,
        source: Option<&GloveFile>,
    ) -> Result<Vec<TokenId>> {
        let ids = self.embeddings.inject_missing(words, source)?;
        if !ids.is_empty() {
            self.emb_cache = table_tensor(&self.embeddings);
        }
        Ok(ids)
    }

    /// Same model at another precision.
    pub fn cast<U: Real>(&self) -> ModelState<U> {
        let mut params = ParamStore::new();
        for (name, t) in self.params.iter() {
            params.add(name.to_string(), t.cast());
        }
        ModelState {
            config: self.config.clone(),
            params,
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
            generator: self.generator,
            adapter: self.adapter.clone(),
            embeddings: self.embeddings.clone(),
            emb_cache: table_tensor(&self.embeddings),
        }
    }

    /// Replaces parameter values, checking names and shapes.
    pub fn load_params(&mut self, named: Vec<(String, Tensor<T>)>) -> Result<()> {
        if named.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                self.params.len(),
                named.len()
            )));
        }
        for (id, (name, t)) in self.params.ids().collect::<Vec<_>>().into_iter().zip(named) {
            let expected = self.params.get(id);
            if self.params.name(id) != name || expected.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} {:?} does not match {} {:?}",
                    t.shape(),
                    self.params.name(id),
                    expected.shape()
                )));
            }
            *self.params.get_mut(id) = t;
        }
        Ok(())
    }
}

fn table_tensor<T: Real>(e: &EmbeddingTable) -> Tensor<T> {
    Tensor::from_vec(
        e.len(),
        e.dim(),
        e.data().iter().map(|&x| T::from_f64(x as f64)).collect(),
    )
}
