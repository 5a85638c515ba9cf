use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::model::{CLS, MASK, NUM_RESERVED, PAD, SEP, UNK};

pub const RESERVED: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

/// Word-level vocabulary with the five reserved ids fixed at `0..=4`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Builds a vocabulary from words in first-appearance order. Words are
    /// lowercased; reserved strings and duplicates are ignored.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Vocab {
            tokens: RESERVED.iter().map(|s| s.to_string()).collect(),
            index: HashMap::new(),
        };
        v.rebuild_index();
        for w in words {
            if RESERVED.contains(&w.as_ref()) {
                continue;
            }
            let w = w.as_ref().to_lowercase();
            if !v.index.contains_key(&w) {
                v.index.insert(w.clone(), v.tokens.len() as u32);
                v.tokens.push(w);
            }
        }
        v
    }

    /// Vocabulary over every word produced by [`split_words`] on the texts.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        Vocab::from_words(texts.into_iter().flat_map(split_words))
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }

    /// Restores the lookup table after deserialization.
    pub fn reindex(mut self) -> Self {
        self.rebuild_index();
        self
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= NUM_RESERVED as usize
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn id_or_unk(&self, word: &str) -> u32 {
        self.id(word).unwrap_or(UNK)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_reserved(id: u32) -> bool {
        id < NUM_RESERVED
    }
}

/// Lowercased word-level split: runs of alphanumerics (with inner
/// apostrophes) are words; every other non-space character is its own token.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() || (ch == '\'' && !cur.is_empty()) {
            cur.extend(ch.to_lowercase());
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if !ch.is_whitespace() {
                out.push(ch.to_string());
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Result of [`tokenize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Tokenized {
    pub ids: Vec<u32>,
    /// Input had no words; `ids` is just `[CLS, SEP]`.
    pub empty: bool,
    pub truncated: bool,
}

/// `CLS w₁ … wₙ SEP`, truncated to `max_len` ids (always ending in `SEP`).
pub fn tokenize(text: &str, vocab: &Vocab, max_len: usize) -> Tokenized {
    encode_words(&split_words(text), vocab, max_len)
}

pub fn encode_words<S: AsRef<str>>(words: &[S], vocab: &Vocab, max_len: usize) -> Tokenized {
    assert!(max_len >= 2, "max_len must fit CLS and SEP");
    let keep = words.len().min(max_len - 2);
    let mut ids = Vec::with_capacity(keep + 2);
    ids.push(CLS);
    ids.extend(words[..keep].iter().map(|w| vocab.id_or_unk(&w.as_ref().to_lowercase())));
    ids.push(SEP);
    if words.is_empty() {
        log::warn!("tokenize: empty text mapped to [CLS, SEP]");
    }
    Tokenized {
        ids,
        empty: words.is_empty(),
        truncated: keep < words.len(),
    }
}

/// Space-joined words, skipping reserved ids other than UNK and MASK.
pub fn detokenize(ids: &[u32], vocab: &Vocab) -> String {
    ids.iter()
        .filter(|&&t| !matches!(t, PAD | CLS | SEP))
        .map(|&t| if t == MASK { RESERVED[MASK as usize] } else { vocab.token(t) })
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab() -> Vocab {
        Vocab::from_words(["the", "cat", "sits", "."])
    }

    #[test]
    fn empty_text_is_cls_sep() {
        let t = tokenize("", &vocab(), 8);
        assert_eq!(t.ids, vec![CLS, SEP]);
        assert!(t.empty);
    }

    #[test]
    fn direct_lookup() {
        let v = vocab();
        let t = tokenize("The cat sits", &v, 8);
        assert_eq!(t.ids, vec![CLS, 5, 6, 7, SEP]);
        assert_eq!(tokenize("the dog.", &v, 8).ids, vec![CLS, 5, UNK, 8, SEP]);
    }

    #[test]
    fn truncation_keeps_sep() {
        let t = tokenize("the cat sits the cat sits the cat", &vocab(), 5);
        assert_eq!(t.ids.len(), 5);
        assert_eq!(*t.ids.last().unwrap(), SEP);
        assert!(t.truncated);
    }

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocab::from_words(["[MASK]", "x"]);
        assert_eq!(v.id("[PAD]"), Some(PAD));
        assert_eq!(v.id("[MASK]"), Some(MASK));
        assert_eq!(v.id("x"), Some(5));
    }

    proptest! {
        #[test]
        fn round_trip_in_vocab(idx in proptest::collection::vec(0usize..4, 0..12)) {
            let v = vocab();
            let words: Vec<&str> = idx.iter().map(|&i| ["the", "cat", "sits", "."][i]).collect();
            let ids = tokenize(&words.join(" "), &v, 64).ids;
            let again = tokenize(&detokenize(&ids, &v), &v, 64).ids;
            prop_assert_eq!(ids, again);
        }
    }
}
