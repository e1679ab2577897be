//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "SEDTCKPT"
//! version    u32
//! header     u32 length + UTF-8 TOML (config, vocabulary, tensor list)
//! tensors    u32 count, then per tensor:
//!              u32 name length, name, u32 ndim, ndim × u32 dims,
//!              f32 data in row-major order
//! ```
//!
//! Trainable parameters come first in declaration order, followed by the
//! frozen embedding table under the name `embedding.table`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ModelConfig, ModelState};
use crate::corpus::{EmbeddingTable, Vocab, SPECIALS};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const MAGIC: &[u8; 8] = b"SEDTCKPT";
pub const VERSION: u32 = 1;
pub const EMBEDDING_TENSOR: &str = "embedding.table";

/// Everything in a checkpoint except the tensor data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    /// Precision of the model when it was saved; data is always f32.
    pub precision: String,
    pub step: u64,
    pub config: ModelConfig,
    pub embedding: EmbeddingHeader,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingHeader {
    pub dim: usize,
    pub fill_norm: f32,
    pub seed: u64,
    pub frozen: Vec<String>,
    pub vocab: Vec<String>,
}

/// Header plus tensor names and shapes, as reported by `inspect`.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointInfo {
    pub version: u32,
    pub header: Header,
    pub tensors: Vec<(String, Vec<usize>)>,
}

impl CheckpointInfo {
    pub fn trainable_count(&self) -> usize {
        self.tensors
            .iter()
            .filter(|(n, _)| !self.header.embedding.frozen.contains(n))
            .map(|(_, d)| d.iter().product::<usize>())
            .sum()
    }

    pub fn frozen_count(&self) -> usize {
        self.tensors
            .iter()
            .filter(|(n, _)| self.header.embedding.frozen.contains(n))
            .map(|(_, d)| d.iter().product::<usize>())
            .sum()
    }
}

pub fn to_bytes<T: Real>(model: &ModelState<T>, step: u64) -> Result<Vec<u8>> {
    let emb = model.embeddings();
    let header = Header {
        precision: T::NAME.to_string(),
        step,
        config: model.config.clone(),
        embedding: EmbeddingHeader {
            dim: emb.dim(),
            fill_norm: emb.fill_norm(),
            seed: emb.seed(),
            frozen: vec![EMBEDDING_TENSOR.to_string()],
            vocab: emb.vocab().words().to_vec(),
        },
    };
    let text = toml::to_string(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, len_u32(text.len())?);
    out.extend_from_slice(text.as_bytes());
    put_u32(&mut out, len_u32(model.params.len() + 1)?);
    for (name, t) in model.params.iter() {
        put_tensor(&mut out, name, &[t.rows(), t.cols()], t.data().iter().map(|x| x.as_f64() as f32))?;
    }
    put_tensor(
        &mut out,
        EMBEDDING_TENSOR,
        &[emb.len(), emb.dim()],
        emb.data().iter().copied(),
    )?;
    Ok(out)
}

pub fn save<T: Real>(path: impl AsRef<Path>, model: &ModelState<T>, step: u64) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(model, step)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

struct Parsed {
    info: CheckpointInfo,
    data: Vec<Vec<f32>>,
}

fn parse(bytes: &[u8]) -> Result<Parsed> {
    let mut r = Cursor { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let hlen = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(hlen)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let header: Header = toml::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        let nlen = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(nlen)?)
            .map_err(|e| Error::Checkpoint(e.to_string()))?
            .to_string();
        let ndim = r.u32()? as usize;
        let dims = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        data.push(
            raw.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        );
        tensors.push((name, dims));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after tensors",
            bytes.len() - r.pos
        )));
    }
    Ok(Parsed {
        info: CheckpointInfo {
            version,
            header,
            tensors,
        },
        data,
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

/// Reads only what `inspect` needs. Still validates the whole file.
pub fn inspect(path: impl AsRef<Path>) -> Result<CheckpointInfo> {
    Ok(parse(&read_file(path.as_ref())?)?.info)
}

pub fn from_bytes<T: Real>(bytes: &[u8]) -> Result<(ModelState<T>, CheckpointInfo)> {
    let Parsed { info, mut data } = parse(bytes)?;
    let eh = &info.header.embedding;
    if eh.vocab.len() < SPECIALS.len() || eh.vocab[..SPECIALS.len()] != SPECIALS {
        return Err(Error::Checkpoint("vocabulary does not start with the special tokens".into()));
    }
    let Some(pos) = info.tensors.iter().position(|(n, _)| n == EMBEDDING_TENSOR) else {
        return Err(Error::Checkpoint(format!("missing tensor {EMBEDDING_TENSOR}")));
    };
    if pos + 1 != info.tensors.len() {
        return Err(Error::Checkpoint(format!("{EMBEDDING_TENSOR} must be the last tensor")));
    }
    if info.tensors[pos].1 != [eh.vocab.len(), eh.dim] {
        return Err(Error::Checkpoint(format!(
            "{EMBEDDING_TENSOR} shape {:?} does not match vocabulary {} x {}",
            info.tensors[pos].1,
            eh.vocab.len(),
            eh.dim
        )));
    }
    let vocab = Vocab::from_words(&eh.vocab[SPECIALS.len()..])?;
    let emb_data = data.pop().expect("embedding tensor present");
    let table = EmbeddingTable::from_parts(vocab, eh.dim, emb_data, eh.fill_norm, eh.seed)?;
    let mut model = ModelState::new(info.header.config.clone(), table, 0)?;

    let mut named = Vec::with_capacity(data.len());
    for ((name, dims), values) in info.tensors.iter().zip(data) {
        if dims.len() != 2 {
            return Err(Error::Checkpoint(format!("tensor {name} is not two-dimensional")));
        }
        let t = Tensor::from_vec(dims[0], dims[1], values.into_iter().map(|x| T::from_f64(x as f64)).collect());
        named.push((name.clone(), t));
    }
    model.load_params(named)?;
    Ok((model, info))
}

pub fn load<T: Real>(path: impl AsRef<Path>) -> Result<(ModelState<T>, CheckpointInfo)> {
    from_bytes(&read_file(path.as_ref())?)
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Checkpoint(format!("length {n} does not fit in u32")))
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, dims: &[usize], data: impl Iterator<Item = f32>) -> Result<()> {
    put_u32(out, len_u32(name.len())?);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, len_u32(dims.len())?);
    for &d in dims {
        put_u32(out, len_u32(d)?);
    }
    for x in data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
