//! Transformer encoder-decoder whose generator sees the edit vector.
//!
//! The encoder reads the frozen embeddings of x′. The decoder runs masked
//! self-attention over the gold (or generated) prefix and encoder-decoder
//! attention over the encoder memory. The edit vector is *not* fed into
//! any decoder layer: it is concatenated to the decoder output right before
//! the generator, which projects `[out; z]` into embedding space and scores
//! every vocabulary word by a dot product with its frozen embedding. Words
//! injected after training are therefore scored like any other word.

pub mod checkpoint;
mod model;
pub mod tape;

pub use model::{ModelConfig, ModelState, ParamId, ParamStore, TransformerConfig};
pub use tape::{AttnMask, Gradients, Tape, Var};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{TokenId, BOS, EOS, PAD};
use crate::editvae::EditVector;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

use model::{AttentionParams, DecoderLayer, EncoderLayer, FeedForward, Norm};

const LN_EPS: f64 = 1e-5;

/// One forward pass of a model on a fresh tape.
///
/// Parameters are bound to the tape lazily, on first use, so gradients
/// exist exactly for the parameters the pass touched.
pub struct Graph<'m, T: Real> {
    pub tape: Tape<T>,
    model: &'m ModelState<T>,
    bound: Vec<Option<Var>>,
    dropout: Option<(T, ChaCha8Rng)>,
    embedding_inputs: Vec<Var>,
}

impl<'m, T: Real> Graph<'m, T> {
    /// Inference graph: no dropout.
    pub fn new(model: &'m ModelState<T>) -> Self {
        Self {
            tape: Tape::new(),
            model,
            bound: vec![None; model.params.len()],
            dropout: None,
            embedding_inputs: Vec::new(),
        }
    }

    /// Training graph with dropout masks drawn from `rng`.
    pub fn training(model: &'m ModelState<T>, rng: ChaCha8Rng) -> Self {
        let mut g = Self::new(model);
        let rate = model.config.dropout;
        if rate > 0.0 {
            g.dropout = Some((T::from_f64(rate), rng));
        }
        g
    }

    pub fn model(&self) -> &'m ModelState<T> {
        self.model
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.param(self.model.params.get(id).clone());
        self.bound[id.0] = Some(v);
        v
    }

    /// Constants built from the frozen embedding table during this pass.
    pub fn embedding_inputs(&self) -> &[Var] {
        &self.embedding_inputs
    }

    /// Gradients for every parameter, in declaration order; `None` where
    /// the pass never used the parameter.
    pub fn param_grads(&self, grads: &mut Gradients<T>) -> Vec<Option<Tensor<T>>> {
        self.bound
            .iter()
            .map(|b| b.and_then(|v| grads.take(v)))
            .collect()
    }

    fn dropout(&mut self, x: Var) -> Var {
        let Some((rate, rng)) = self.dropout.as_mut() else {
            return x;
        };
        let rate = *rate;
        let (r, c) = self.tape.value(x).shape();
        let keep = T::one() - rate;
        let scale = keep.recip();
        let keep_f = keep.as_f64();
        let mask: Vec<T> = (0..r * c)
            .map(|_| {
                if rng.random::<f64>() < keep_f {
                    scale
                } else {
                    T::zero()
                }
            })
            .collect();
        self.tape.mul_const(x, Tensor::from_vec(r, c, mask))
    }

    fn linear(&mut self, x: Var, w: ParamId, b: ParamId) -> Var {
        let w = self.param(w);
        let b = self.param(b);
        let h = self.tape.matmul(x, w);
        self.tape.add_row(h, b)
    }

    fn norm(&mut self, x: Var, n: &Norm) -> Var {
        let g = self.param(n.gain);
        let b = self.param(n.bias);
        self.tape.layer_norm(x, g, b, LN_EPS)
    }

    fn embed(&mut self, ids: &[TokenId]) -> Var {
        let emb = &self.model.embeddings;
        let d = emb.dim();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            data.extend(emb.row(id).iter().map(|&x| T::from_f64(x as f64)));
        }
        let v = self.tape.constant(Tensor::from_vec(ids.len(), d, data));
        self.embedding_inputs.push(v);
        v
    }

    fn positions(&mut self, n: usize) -> Var {
        let d = self.model.config.d_model;
        self.tape.constant(sinusoidal_positions(n, d))
    }

    fn feed_forward(&mut self, x: Var, f: &FeedForward) -> Var {
        let h = self.linear(x, f.w1, f.b1);
        let h = self.tape.relu(h);
        let h = self.dropout(h);
        self.linear(h, f.w2, f.b2)
    }

    fn multi_head(&mut self, queries: Var, keys: Var, p: &AttentionParams, mask: &AttnMask) -> Var {
        let cfg = &self.model.config;
        let (heads, d_k) = (cfg.n_heads, cfg.d_model / cfg.n_heads);
        let q = self.linear(queries, p.wq, p.bq);
        let k = self.linear(keys, p.wk, p.bk);
        let v = self.linear(keys, p.wv, p.bv);
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = self.tape.slice_cols(q, h * d_k, d_k);
            let kh = self.tape.slice_cols(k, h * d_k, d_k);
            let vh = self.tape.slice_cols(v, h * d_k, d_k);
            outs.push(scaled_dot_attention(&mut self.tape, qh, kh, vh, mask));
        }
        let cat = if heads == 1 {
            outs[0]
        } else {
            self.tape.concat_cols(&outs)
        };
        self.linear(cat, p.wo, p.bo)
    }

    fn encoder_layer(&mut self, x: Var, l: &EncoderLayer, mask: &AttnMask) -> Var {
        let h = self.norm(x, &l.ln1);
        let a = self.multi_head(h, h, &l.attn, mask);
        let a = self.dropout(a);
        let x = self.tape.add(x, a);
        let h = self.norm(x, &l.ln2);
        let f = self.feed_forward(h, &l.ffn);
        let f = self.dropout(f);
        self.tape.add(x, f)
    }

    fn decoder_layer(
        &mut self,
        y: Var,
        memory: Var,
        l: &DecoderLayer,
        self_mask: &AttnMask,
        cross_mask: &AttnMask,
    ) -> Var {
        let h = self.norm(y, &l.ln1);
        let a = self.multi_head(h, h, &l.self_attn, self_mask);
        let a = self.dropout(a);
        let y = self.tape.add(y, a);
        let h = self.norm(y, &l.ln2);
        let c = self.multi_head(h, memory, &l.cross_attn, cross_mask);
        let c = self.dropout(c);
        let y = self.tape.add(y, c);
        let h = self.norm(y, &l.ln3);
        let f = self.feed_forward(h, &l.ffn);
        let f = self.dropout(f);
        self.tape.add(y, f)
    }

    fn check_len(&self, ids: &[TokenId]) -> Result<()> {
        let max = self.model.config.max_len;
        let len = ids.iter().filter(|&&t| t != PAD).count();
        if len > max {
            return Err(Error::LengthExceeded { len, max });
        }
        if ids.is_empty() {
            return Err(Error::EmptyInput("token ids"));
        }
        Ok(())
    }

    /// Encoder memory (`len × d_model`) for x′. PAD positions are masked
    /// out as attention keys.
    pub fn encode(&mut self, src: &[TokenId]) -> Result<Var> {
        self.check_len(src)?;
        let model = self.model;
        let mask = AttnMask::Keys(src.iter().map(|&t| t != PAD).collect());
        let e = self.embed(src);
        let x = self.linear(e, model.encoder.input.0, model.encoder.input.1);
        let pos = self.positions(src.len());
        let x = self.tape.add(x, pos);
        let mut x = self.dropout(x);
        for layer in &model.encoder.layers {
            x = self.encoder_layer(x, layer, &mask);
        }
        Ok(self.norm(x, &model.encoder.final_norm))
    }

    /// Decoder output `out` (`prefix.len() × d_model`) under a causal mask.
    pub fn decode(&mut self, memory: Var, src: &[TokenId], prefix: &[TokenId]) -> Result<Var> {
        if prefix.first() != Some(&BOS) {
            return Err(Error::Config("decoder prefix must start with <bos>".into()));
        }
        let max = self.model.config.max_len + 1;
        if prefix.len() > max {
            return Err(Error::LengthExceeded {
                len: prefix.len(),
                max,
            });
        }
        let model = self.model;
        let self_mask = AttnMask::Causal(prefix.iter().map(|&t| t != PAD).collect());
        let cross_mask = AttnMask::Keys(src.iter().map(|&t| t != PAD).collect());
        let e = self.embed(prefix);
        let y = self.linear(e, model.decoder.input.0, model.decoder.input.1);
        let pos = self.positions(prefix.len());
        let y = self.tape.add(y, pos);
        let mut y = self.dropout(y);
        for layer in &model.decoder.layers {
            y = self.decoder_layer(y, memory, layer, &self_mask, &cross_mask);
        }
        Ok(self.norm(y, &model.decoder.final_norm))
    }

    /// Vocabulary logits from `[out; z]` for every row of `out`.
    pub fn generate(&mut self, out: Var, z: Var) -> Var {
        let model = self.model;
        let rows = self.tape.value(out).rows();
        let zr = self.tape.repeat_rows(z, rows);
        let cat = self.tape.concat_cols(&[out, zr]);
        let h = self.linear(cat, model.generator.0, model.generator.1);
        let table = self.tape.constant(model.embedding_matrix());
        self.tape.matmul_nt(h, table)
    }

    /// Logits for the token following `prefix`.
    pub fn decode_step(&mut self, memory: Var, src: &[TokenId], prefix: &[TokenId], z: Var) -> Result<Var> {
        let out = self.decode(memory, src, prefix)?;
        let last = self.tape.slice_rows(out, prefix.len() - 1, 1);
        Ok(self.generate(last, z))
    }

    /// Mean token cross-entropy of `target` given `source` and `z`, with
    /// teacher forcing. Trailing PADs in either sequence are ignored.
    pub fn forward_loss(&mut self, source: &[TokenId], target: &[TokenId], z: Var) -> Result<Var> {
        self.check_len(target)?;
        let memory = self.encode(source)?;
        let (prefix, targets) = teacher_forcing(target);
        let out = self.decode(memory, source, &prefix)?;
        let logits = self.generate(out, z);
        Ok(self.tape.cross_entropy(logits, &targets))
    }

    /// Puts an edit vector on the tape as a constant `1 × d_edit` row.
    pub fn edit_constant(&mut self, z: &EditVector) -> Var {
        self.tape.constant(Tensor::row_vector(
            z.to_vec().into_iter().map(T::from_f64).collect(),
        ))
    }
}

/// Decoder inputs `[BOS, x…]` and next-token targets `[x…, EOS]`; padded
/// target positions get no target.
pub fn teacher_forcing(target: &[TokenId]) -> (Vec<TokenId>, Vec<Option<usize>>) {
    let real = target.iter().take_while(|&&t| t != PAD).count();
    let mut prefix = Vec::with_capacity(target.len() + 1);
    prefix.push(BOS);
    prefix.extend_from_slice(target);
    let mut targets: Vec<Option<usize>> = target[..real].iter().map(|&t| Some(t)).collect();
    targets.push(Some(EOS));
    targets.resize(prefix.len(), None);
    (prefix, targets)
}

/// Softmax-weighted sum of value rows: `softmax(q·Kᵀ/√d_k) V` for every
/// query row, with forbidden positions weighted zero.
pub fn scaled_dot_attention<T: Real>(tape: &mut Tape<T>, q: Var, k: Var, v: Var, mask: &AttnMask) -> Var {
    let d_k = tape.value(k).cols();
    let scores = tape.matmul_nt(q, k);
    let scores = tape.scale(scores, T::from_f64(1.0 / (d_k as f64).sqrt()));
    let weights = tape.masked_softmax(scores, mask);
    tape.matmul(weights, v)
}

/// Single-query attention outside any model: `allowed[i]` marks usable
/// keys.
pub fn attention<T: Real>(q: &[T], keys: &Tensor<T>, values: &Tensor<T>, allowed: &[bool]) -> Vec<T> {
    let mut tape = Tape::new();
    let q = tape.constant(Tensor::row_vector(q.to_vec()));
    let k = tape.constant(keys.clone());
    let v = tape.constant(values.clone());
    let out = scaled_dot_attention(&mut tape, q, k, v, &AttnMask::Keys(allowed.to_vec()));
    tape.value(out).data().to_vec()
}

pub fn sinusoidal_positions<T: Real>(n: usize, d: usize) -> Tensor<T> {
    let mut t = Tensor::zeros(n, d);
    for pos in 0..n {
        for i in 0..d {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 * rate;
            let v = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            t.set(pos, i, T::from_f64(v));
        }
    }
    t
}

/// Decoding options for [`generate_sentence`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodeOptions {
    /// 0 means greedy argmax.
    pub temperature: f64,
    pub max_len: usize,
}

/// Generates a token sequence for `src` under edit vector `z`.
///
/// `<pad>` and `<bos>` are never produced and `<eos>` is not allowed as the
/// first token, so the output is never empty. Stops at `<eos>` or
/// `opts.max_len` tokens.
pub fn generate_sentence<T: Real>(
    model: &ModelState<T>,
    src: &[TokenId],
    z: &EditVector,
    opts: DecodeOptions,
    rng: &mut impl Rng,
) -> Result<Vec<TokenId>> {
    let memory = {
        let mut g = Graph::new(model);
        let m = g.encode(src)?;
        g.tape.value(m).clone()
    };
    let cap = opts.max_len.min(model.config.max_len).max(1);
    let mut prefix = vec![BOS];
    let mut out = Vec::new();
    while out.len() < cap {
        let mut g = Graph::new(model);
        let mem = g.tape.constant(memory.clone());
        let zv = g.edit_constant(z);
        let logits = g.decode_step(mem, src, &prefix, zv)?;
        let row = g.tape.value(logits).data();
        let next = pick_token(row, out.is_empty(), opts.temperature, rng);
        if next == EOS {
            break;
        }
        out.push(next);
        prefix.push(next);
    }
    Ok(out)
}

fn pick_token<T: Real>(logits: &[T], first: bool, temperature: f64, rng: &mut impl Rng) -> TokenId {
    let allowed = |i: usize| i != PAD && i != BOS && !(first && i == EOS);
    if temperature <= 0.0 {
        let mut best = None;
        for (i, &l) in logits.iter().enumerate() {
            if !allowed(i) {
                continue;
            }
            if best.is_none_or(|(_, b)| l > b) {
                best = Some((i, l));
            }
        }
        return best.map(|(i, _)| i).unwrap_or(EOS);
    }
    let max = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| allowed(*i))
        .map(|(_, l)| l.as_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(i, l)| {
            if allowed(i) {
                ((l.as_f64() - max) / temperature).exp()
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if *w > 0.0 {
            if u < *w {
                return i;
            }
            u -= w;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(EOS)
}

/// Deterministic per-item generator derived from a base seed and indices.
pub fn derived_rng(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut s = seed ^ 0x5851_f42d_4c95_7f2d;
    for x in [a, b] {
        s = s.wrapping_add(0x9e37_79b9_7f4a_7c15) ^ x;
        s = (s ^ (s >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        s = (s ^ (s >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        s ^= s >> 31;
    }
    ChaCha8Rng::seed_from_u64(s)
}
