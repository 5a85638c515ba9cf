//! Minimal pairs as JSON lines:
//! `{"prefix": [...], "suffix": [...], "good": "...", "bad": "...", "phenomenon": "..."}`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vocab::{encode_words, Vocab};
use crate::error::{Error, Result};
use crate::model::MASK;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinimalPair {
    pub prefix: Vec<String>,
    pub suffix: Vec<String>,
    pub good: String,
    pub bad: String,
    pub phenomenon: String,
}

impl MinimalPair {
    pub fn good_sentence(&self) -> Vec<String> {
        self.with_focus(&self.good)
    }

    pub fn bad_sentence(&self) -> Vec<String> {
        self.with_focus(&self.bad)
    }

    fn with_focus(&self, w: &str) -> Vec<String> {
        let mut v = self.prefix.clone();
        v.push(w.to_string());
        v.extend(self.suffix.iter().cloned());
        v
    }
}

pub fn parse_pairs(text: &str) -> Result<Vec<MinimalPair>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse(format!("pairs line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn load_pairs(path: &Path) -> Result<Vec<MinimalPair>> {
    parse_pairs(&std::fs::read_to_string(path)?)
}

pub fn write_pairs(pairs: &[MinimalPair]) -> String {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&serde_json::to_string(p).expect("pairs serialize"));
        out.push('\n');
    }
    out
}

/// A pair ready for scoring: `ids` has `MASK` at `focus`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPair {
    pub ids: Vec<u32>,
    pub focus: usize,
    pub good: u32,
    pub bad: u32,
    pub phenomenon: String,
}

/// Kept/filtered counts per phenomenon.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairFilterReport {
    pub kept: BTreeMap<String, usize>,
    pub filtered: BTreeMap<String, usize>,
}

impl PairFilterReport {
    pub fn total_kept(&self) -> usize {
        self.kept.values().sum()
    }

    pub fn total_filtered(&self) -> usize {
        self.filtered.values().sum()
    }
}

/// Drops pairs whose focus words are out of vocabulary (or identical, or
/// cut off by truncation) and masks the focus of the rest.
pub fn encode_pairs(pairs: &[MinimalPair], vocab: &Vocab, max_len: usize) -> (Vec<EncodedPair>, PairFilterReport) {
    let mut out = Vec::new();
    let mut report = PairFilterReport::default();
    for p in pairs {
        let good = vocab.id(&p.good.to_lowercase());
        let bad = vocab.id(&p.bad.to_lowercase());
        let focus = p.prefix.len() + 1;
        let ok = match (good, bad) {
            (Some(g), Some(b)) => g != b && focus < max_len - 1,
            _ => false,
        };
        if !ok {
            *report.filtered.entry(p.phenomenon.clone()).or_default() += 1;
            // make sure the phenomenon shows up with zero kept pairs
            report.kept.entry(p.phenomenon.clone()).or_default();
            continue;
        }
        let mut ids = encode_words(&p.good_sentence(), vocab, max_len).ids;
        ids[focus] = MASK;
        *report.kept.entry(p.phenomenon.clone()).or_default() += 1;
        out.push(EncodedPair {
            ids,
            focus,
            good: good.unwrap(),
            bad: bad.unwrap(),
            phenomenon: p.phenomenon.clone(),
        });
    }
    (out, report)
}
