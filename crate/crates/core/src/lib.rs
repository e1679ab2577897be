//! Edit-vector sentence augmentation.
//!
//! Pipeline: [`pairmine`] finds lexically close sentence pairs, [`trainer`]
//! fits a transformer editor ([`seqmodel`]) whose latent edit lives in
//! [`editvae`], [`augmentor`] applies prior edits to new sentences, and
//! [`evaluator`] / [`downstream`] measure the results.

pub mod augmentor;
pub mod corpus;
pub mod downstream;
pub mod editvae;
pub mod error;
pub mod evaluator;
pub mod pairmine;
pub mod seqmodel;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
