//! Flat `key = value` config files merged under command-line flags.
//!
//! Keys are the snake_case field names of the model and training
//! configurations. Precedence: flags, then the file, then defaults. An
//! unset patience shrinks to `max_steps` so short runs stay valid.

use std::path::Path;

use anyhow::{bail, Context, Result};
use sentedit_core::seqmodel::ModelConfig;
use sentedit_core::trainer::TrainConfig;
use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

pub fn read_table(path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let table: Table = text.parse().with_context(|| format!("parsing config {}", path.display()))?;
    if let Some((k, _)) = table.iter().find(|(_, v)| v.is_table() || v.is_array()) {
        bail!("config key {k:?} is not a flat value");
    }
    Ok(table)
}

fn keys_of<C: Serialize + Default>() -> Vec<String> {
    let table = Table::try_from(C::default()).expect("config serializes to a table");
    table.keys().cloned().collect()
}

fn pick<C: DeserializeOwned>(merged: &Table, keys: &[String]) -> Result<C> {
    let mut part = Table::new();
    for k in keys {
        if let Some(v) = merged.get(k) {
            part.insert(k.clone(), v.clone());
        }
    }
    Ok(part.try_into()?)
}

/// Model and training configurations from an optional file with
/// `overrides` (flag values) applied on top.
pub fn resolve(file: Option<&Path>, overrides: Vec<(&str, Value)>) -> Result<(ModelConfig, TrainConfig)> {
    let mut merged = match file {
        Some(p) => read_table(p)?,
        None => Table::new(),
    };
    for (k, v) in overrides {
        merged.insert(k.to_string(), v);
    }
    let model_keys = keys_of::<ModelConfig>();
    let train_keys = keys_of::<TrainConfig>();
    if let Some(k) = merged.keys().find(|k| !model_keys.contains(k) && !train_keys.contains(k)) {
        bail!("unknown config key {k:?}");
    }
    let model: ModelConfig = pick(&merged, &model_keys).context("model settings")?;
    let mut train: TrainConfig = pick(&merged, &train_keys).context("training settings")?;
    if !merged.contains_key("patience_steps") {
        train.patience_steps = train.patience_steps.min(train.max_steps);
    }
    model.validate()?;
    train.validate()?;
    Ok((model, train))
}
