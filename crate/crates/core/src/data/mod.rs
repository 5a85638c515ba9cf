//! Tokenization, corpus formats, the synthetic agreement grammar and
//! word-order shuffling.

pub mod conllu;
pub mod pairs;
pub mod shuffle;
pub mod synthetic;
pub mod tsv;
pub mod vocab;

pub use conllu::{load_conllu, parse_conllu, to_conllu, DepSentence, DepToken, DepTreebank};
pub use pairs::{encode_pairs, load_pairs, parse_pairs, write_pairs, EncodedPair, MinimalPair, PairFilterReport};
pub use shuffle::{shuffle_content, shuffle_words, IdentityPermutation, PermutationSource, DEFAULT_SHUFFLE_SETS};
pub use synthetic::{generate_synthetic, GrammarSpec, SyntheticCorpus, SyntheticSentence};
pub use tsv::{load_tsv, parse_tsv};
pub use vocab::{detokenize, encode_words, split_words, tokenize, Tokenized, Vocab};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledExample {
    pub ids: Vec<u32>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClassificationDataset {
    /// Label names; `LabeledExample::label` indexes this.
    pub labels: Vec<String>,
    pub train: Vec<LabeledExample>,
    pub dev: Vec<LabeledExample>,
}

const DEV_SALT: u64 = 0xDE5;

/// Deterministic dev assignment from the line index alone.
pub fn is_dev_index(index: usize, dev_fraction: f64) -> bool {
    let h = rng::mix(index as u64 ^ DEV_SALT);
    (h as f64 / u64::MAX as f64) < dev_fraction
}

impl ClassificationDataset {
    /// Tokenizes `(label, text)` items; labels are numbered in sorted order.
    pub fn from_labeled_texts<L: AsRef<str>, T: AsRef<str>>(
        items: &[(L, T)],
        vocab: &Vocab,
        max_len: usize,
        dev_fraction: f64,
    ) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::input("no labeled examples"));
        }
        if !(0.0..1.0).contains(&dev_fraction) {
            return Err(Error::config(format!("dev fraction {dev_fraction} outside [0, 1)")));
        }
        let mut labels: Vec<String> = items.iter().map(|(l, _)| l.as_ref().to_string()).collect();
        labels.sort();
        labels.dedup();
        let mut ds = ClassificationDataset {
            labels,
            ..Default::default()
        };
        let mut truncated = 0;
        for (i, (l, t)) in items.iter().enumerate() {
            let tok = tokenize(t.as_ref(), vocab, max_len);
            truncated += tok.truncated as usize;
            let ex = LabeledExample {
                ids: tok.ids,
                label: ds.labels.binary_search(&l.as_ref().to_string()).expect("label present"),
            };
            if is_dev_index(i, dev_fraction) {
                ds.dev.push(ex);
            } else {
                ds.train.push(ex);
            }
        }
        if truncated > 0 {
            log::warn!("{truncated} examples truncated to {max_len} tokens");
        }
        Ok(ds)
    }

    pub fn n_classes(&self) -> usize {
        self.labels.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dev_split_is_deterministic_and_roughly_sized() {
        let n = 10_000;
        let dev: Vec<bool> = (0..n).map(|i| is_dev_index(i, 0.1)).collect();
        let again: Vec<bool> = (0..n).map(|i| is_dev_index(i, 0.1)).collect();
        assert_eq!(dev, again);
        let frac = dev.iter().filter(|&&d| d).count() as f64 / n as f64;
        assert!((frac - 0.1).abs() < 0.01, "{frac}");
    }

    #[test]
    fn labels_are_sorted_and_indexed() {
        let vocab = Vocab::from_texts(["a b c"]);
        let items = vec![("z", "a b"), ("m", "c"), ("z", "b")];
        let ds = ClassificationDataset::from_labeled_texts(&items, &vocab, 8, 0.0).unwrap();
        assert_eq!(ds.labels, vec!["m", "z"]);
        assert_eq!(ds.train.iter().map(|e| e.label).collect::<Vec<_>>(), vec![1, 0, 1]);
        assert!(ds.dev.is_empty());
    }
}
