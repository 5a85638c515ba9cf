//! Versioned JSON checkpoint format.
//!
//! ```json
//! {
//!   "format": "synprobe-params",
//!   "version": 1,
//!   "config": { "n_layers": 4, "n_heads": 4, ... },
//!   "tensors": [ { "name": "embed.tok", "len": 6400, "data": [ ... ] }, ... ]
//! }
//! ```
//!
//! Tensors appear in [`Parameters::named`] order. Floats are written with
//! shortest round-trip formatting, so a save/load cycle is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::Parameters;
use crate::error::{Error, Result};

pub const FORMAT_NAME: &str = "synprobe-params";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    len: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: ModelConfig,
    tensors: Vec<TensorRecord>,
}

pub fn to_json(params: &Parameters) -> Result<String> {
    let file = CheckpointFile {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        config: params.config,
        tensors: params
            .named()
            .into_iter()
            .map(|(name, t)| TensorRecord {
                name,
                len: t.len(),
                data: t.to_vec(),
            })
            .collect(),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn from_json(text: &str) -> Result<Parameters> {
    let file: CheckpointFile = serde_json::from_str(text)?;
    if file.format != FORMAT_NAME {
        return Err(Error::Parse(format!("unknown checkpoint format {:?}", file.format)));
    }
    if file.version != FORMAT_VERSION {
        return Err(Error::Parse(format!(
            "unsupported checkpoint version {} (expected {FORMAT_VERSION})",
            file.version
        )));
    }
    let mut params = Parameters::init(file.config, 0)?;
    {
        let slots = params.named_mut();
        if slots.len() != file.tensors.len() {
            return Err(Error::Parse(format!(
                "checkpoint has {} tensors, config implies {}",
                file.tensors.len(),
                slots.len()
            )));
        }
        for ((name, slot), rec) in slots.into_iter().zip(&file.tensors) {
            if name != rec.name || slot.len() != rec.data.len() || rec.len != rec.data.len() {
                return Err(Error::Parse(format!("tensor {} does not match {}", rec.name, name)));
            }
            slot.copy_from_slice(&rec.data);
        }
    }
    params.check_finite()?;
    Ok(params)
}

pub fn save(params: &Parameters, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(to_json(params)?.as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Parameters> {
    let mut text = String::new();
    std::io::Read::read_to_string(&mut BufReader::new(File::open(path)?), &mut text)?;
    from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = ModelConfig {
            n_layers: 1,
            n_heads: 2,
            d_model: 4,
            d_ff: 6,
            vocab_size: 9,
            max_len: 5,
            n_classes: 2,
        };
        let p = Parameters::init(cfg, 11).unwrap();
        let q = from_json(&to_json(&p).unwrap()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn rejects_other_versions() {
        let cfg = ModelConfig {
            n_layers: 0,
            n_heads: 1,
            d_model: 2,
            d_ff: 2,
            vocab_size: 6,
            max_len: 3,
            n_classes: 2,
        };
        let text = to_json(&Parameters::init(cfg, 1).unwrap()).unwrap();
        let bumped = text.replace("\"version\":1", "\"version\":2");
        assert!(matches!(from_json(&bumped), Err(Error::Parse(_))));
    }
}
