//! Run configuration: a TOML file over built-in defaults, then `--set`
//! overrides and subcommand flags on top.
//!
//! The file mirrors [`ExperimentConfig`] (top-level `seed`, tables `model`,
//! `grammar`, `pretrain`, `finetune`, `pgd`, `probe`, `analysis`, plus the
//! `epsilon_grid` array) and an optional `[data]` table with external input
//! files. Keys missing from the file keep their default; unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use synprobe::experiment::ExperimentConfig;

use crate::error::{CliError, CliResult};

/// Optional external inputs. Without `tsv` the synthetic corpus is used.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataPaths {
    /// `label<TAB>text` classification data (MLM corpus and fine-tuning).
    pub tsv: Option<PathBuf>,
    /// CoNLL-U treebank for the probes; split 4:1 into train/dev.
    pub conllu: Option<PathBuf>,
    /// JSON-lines minimal pairs.
    pub pairs: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    pub data: DataPaths,
}

impl RunConfig {
    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Built-in defaults: the desk-scale experiment for the resolved seed.
pub fn defaults(seed: u64) -> ExperimentConfig {
    ExperimentConfig::desk().with_seed(seed)
}

fn read_file(path: &Path) -> CliResult<Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read config {}: {e}", path.display())))?;
    let table: toml::Table =
        toml::from_str(&text).map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
    Ok(serde_json::to_value(table)?)
}

/// Parses one `key.path=value` override; the value is read as a TOML
/// literal and falls back to a bare string.
fn parse_override(spec: &str) -> CliResult<(Vec<String>, Value)> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::usage(format!("override {spec:?} is not key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(CliError::usage(format!("bad override key {key:?}")));
    }
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => serde_json::to_value(t.remove("v").expect("key v"))?,
        Err(_) => Value::String(raw.to_string()),
    };
    Ok((path, value))
}

fn set_path(root: &mut Value, path: &[String], value: Value) -> CliResult<()> {
    let mut cur = root;
    for (i, k) in path.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| CliError::usage(format!("override {} goes through a non-table value", path.join("."))))?;
        if i + 1 == path.len() {
            obj.insert(k.clone(), value);
            return Ok(());
        }
        cur = obj.entry(k.clone()).or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

/// Recursively overlays `top` onto `base`; tables merge, everything else
/// replaces.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn strict<T: serde::de::DeserializeOwned>(value: Value, what: &str) -> CliResult<T> {
    let mut unknown = Vec::new();
    let out: T = serde_ignored::deserialize(value, |p| unknown.push(p.to_string()))
        .map_err(|e| CliError::usage(format!("{what}: {e}")))?;
    if !unknown.is_empty() {
        return Err(CliError::usage(format!("unknown {what} keys: {}", unknown.join(", "))));
    }
    Ok(out)
}

/// Resolves the run configuration with precedence flag > file > default.
/// `seed` is the `--seed` flag. Relative data paths in the file are taken
/// relative to the file; those given with `--set` relative to the working
/// directory.
pub fn resolve(file: Option<&Path>, overrides: &[String], seed: Option<u64>) -> CliResult<RunConfig> {
    let mut user = match file {
        Some(p) => {
            let mut v = read_file(p)?;
            if let (Some(dir), Some(Value::Object(data))) = (p.parent(), v.get_mut("data")) {
                for slot in data.values_mut() {
                    if let Value::String(s) = slot {
                        if Path::new(s.as_str()).is_relative() {
                            *s = dir.join(&*s).to_string_lossy().into_owned();
                        }
                    }
                }
            }
            v
        }
        None => Value::Object(Map::new()),
    };
    for spec in overrides {
        let (path, value) = parse_override(spec)?;
        set_path(&mut user, &path, value)?;
    }
    if let Some(s) = seed {
        set_path(&mut user, &["seed".into()], Value::from(s))?;
    }
    let data_value = user.as_object_mut().and_then(|o| o.remove("data"));
    let data: DataPaths = match data_value {
        Some(v) => strict(v, "data")?,
        None => DataPaths::default(),
    };
    let seed = match user.get("seed") {
        None => 0,
        Some(v) => v
            .as_u64()
            .ok_or_else(|| CliError::usage(format!("seed must be a non-negative integer, got {v}")))?,
    };
    let mut merged = serde_json::to_value(defaults(seed))?;
    merge(&mut merged, user);
    let experiment: ExperimentConfig = strict(merged, "config")?;
    Ok(RunConfig { experiment, data })
}
