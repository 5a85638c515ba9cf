use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const MASK: u32 = 4;
pub const NUM_RESERVED: u32 = 5;

/// Padded integer token matrix plus per-row metadata.
///
/// Row `i` holds `lengths[i]` real tokens (`CLS … SEP`) followed by `PAD`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch {
    width: usize,
    ids: Vec<u32>,
    lengths: Vec<usize>,
    pub labels: Option<Vec<usize>>,
    /// Per row: `(position, original token id)` for every masked position.
    pub masks: Option<Vec<Vec<(usize, u32)>>>,
}

impl TokenBatch {
    pub fn from_rows(rows: &[Vec<u32>]) -> Self {
        let width = rows.iter().map(Vec::len).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(width * rows.len());
        for r in rows {
            ids.extend_from_slice(r);
            ids.extend(std::iter::repeat_n(PAD, width - r.len()));
        }
        TokenBatch {
            width,
            ids,
            lengths: rows.iter().map(Vec::len).collect(),
            labels: None,
            masks: None,
        }
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Self {
        assert_eq!(labels.len(), self.len());
        self.labels = Some(labels);
        self
    }

    pub fn with_masks(mut self, masks: Vec<Vec<(usize, u32)>>) -> Self {
        assert_eq!(masks.len(), self.len());
        self.masks = Some(masks);
        self
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    /// Unpadded tokens of row `i`.
    pub fn row(&self, i: usize) -> &[u32] {
        &self.ids[i * self.width..i * self.width + self.lengths[i]]
    }

    /// Full padded row `i`.
    pub fn padded_row(&self, i: usize) -> &[u32] {
        &self.ids[i * self.width..(i + 1) * self.width]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u32]> {
        (0..self.len()).map(move |i| self.row(i))
    }

    pub fn validate(&self, vocab_size: usize, max_len: usize) -> Result<()> {
        for (i, row) in self.rows().enumerate() {
            validate_row(row, vocab_size, max_len).map_err(|e| match e {
                Error::Input(m) => Error::Input(format!("row {i}: {m}")),
                other => other,
            })?;
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.len() {
                return Err(Error::input("label count differs from row count"));
            }
        }
        if let Some(masks) = &self.masks {
            for (i, m) in masks.iter().enumerate() {
                for &(p, _) in m {
                    if p == 0 || p + 1 >= self.lengths[i] {
                        return Err(Error::input(format!("row {i}: mask position {p} outside content")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Checks the `CLS … SEP` framing and the id range of one unpadded row.
pub fn validate_row(row: &[u32], vocab_size: usize, max_len: usize) -> Result<()> {
    if row.len() < 2 {
        return Err(Error::input("sequence shorter than CLS+SEP"));
    }
    if row.len() > max_len {
        return Err(Error::input(format!("length {} exceeds max_len {max_len}", row.len())));
    }
    if row[0] != CLS || row[row.len() - 1] != SEP {
        return Err(Error::input("sequence must start with CLS and end with SEP"));
    }
    if let Some(&bad) = row.iter().find(|&&t| t as usize >= vocab_size) {
        return Err(Error::input(format!("token id {bad} >= vocab_size {vocab_size}")));
    }
    Ok(())
}
