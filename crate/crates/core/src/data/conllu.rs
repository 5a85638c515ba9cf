//! CoNLL-U reader and writer.
//!
//! Ten tab-separated columns per token line, `#` comment lines and blank-line
//! sentence separation. Multiword token ranges (`3-4`) and empty nodes (`5.1`)
//! are skipped. Only FORM, UPOS, HEAD and DEPREL are retained.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepToken {
    pub form: String,
    pub upos: String,
    /// 1-based head index; 0 is the artificial root.
    pub head: usize,
    pub deprel: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DepSentence {
    pub sent_id: Option<String>,
    pub tokens: Vec<DepToken>,
}

impl DepSentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn forms(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.form.as_str()).collect()
    }

    pub fn heads(&self) -> Vec<usize> {
        self.tokens.iter().map(|t| t.head).collect()
    }

    /// Exactly one root, heads in range, no cycles.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let n = self.tokens.len();
        if n == 0 {
            return Err("empty sentence".into());
        }
        let heads = self.heads();
        if let Some((i, &h)) = heads.iter().enumerate().find(|(_, &h)| h > n) {
            return Err(format!("token {} has head {} beyond sentence length {}", i + 1, h, n));
        }
        let roots = heads.iter().filter(|&&h| h == 0).count();
        if roots != 1 {
            return Err(format!("expected exactly one root, found {roots}"));
        }
        for start in 1..=n {
            let mut cur = start;
            for _ in 0..=n {
                if cur == 0 {
                    break;
                }
                cur = heads[cur - 1];
            }
            if cur != 0 {
                return Err(format!("head cycle through token {start}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DepTreebank {
    pub sentences: Vec<DepSentence>,
}

impl DepTreebank {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Sorted distinct UPOS tags.
    pub fn pos_tags(&self) -> Vec<String> {
        let mut v: Vec<String> = self
            .sentences
            .iter()
            .flat_map(|s| s.tokens.iter().map(|t| t.upos.clone()))
            .collect();
        v.sort();
        v.dedup();
        v
    }

    /// Sorted distinct dependency labels.
    pub fn deprels(&self) -> Vec<String> {
        let mut v: Vec<String> = self
            .sentences
            .iter()
            .flat_map(|s| s.tokens.iter().map(|t| t.deprel.clone()))
            .collect();
        v.sort();
        v.dedup();
        v
    }

    /// Deterministic split: every `k`-th sentence (by index) goes to the
    /// second part.
    pub fn split_every(&self, k: usize) -> (DepTreebank, DepTreebank) {
        let mut a = DepTreebank::default();
        let mut b = DepTreebank::default();
        for (i, s) in self.sentences.iter().enumerate() {
            if k > 0 && i % k == k - 1 {
                b.sentences.push(s.clone());
            } else {
                a.sentences.push(s.clone());
            }
        }
        (a, b)
    }
}

fn sentence_label(s: &DepSentence, ordinal: usize) -> String {
    match &s.sent_id {
        Some(id) => format!("sentence {ordinal} (sent_id {id})"),
        None => format!("sentence {ordinal}"),
    }
}

pub fn parse_conllu(text: &str) -> Result<DepTreebank> {
    let mut bank = DepTreebank::default();
    let mut cur = DepSentence::default();
    let mut ordinal = 1;
    let finish = |cur: &mut DepSentence, bank: &mut DepTreebank, ordinal: &mut usize| -> Result<()> {
        if cur.tokens.is_empty() {
            cur.sent_id = None;
            return Ok(());
        }
        let s = std::mem::take(cur);
        s.validate()
            .map_err(|m| Error::Parse(format!("{}: {m}", sentence_label(&s, *ordinal))))?;
        bank.sentences.push(s);
        *ordinal += 1;
        Ok(())
    };
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            finish(&mut cur, &mut bank, &mut ordinal)?;
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(id) = comment.trim().strip_prefix("sent_id") {
                cur.sent_id = Some(id.trim_start_matches([' ', '=']).trim().to_string());
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(Error::Parse(format!(
                "line {}: expected 10 tab-separated columns, found {}",
                lineno + 1,
                cols.len()
            )));
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let id: usize = cols[0]
            .parse()
            .map_err(|_| Error::Parse(format!("line {}: bad token id {:?}", lineno + 1, cols[0])))?;
        if id != cur.tokens.len() + 1 {
            return Err(Error::Parse(format!(
                "line {}: token id {} out of sequence in {}",
                lineno + 1,
                id,
                sentence_label(&cur, ordinal)
            )));
        }
        let head: usize = cols[6]
            .parse()
            .map_err(|_| Error::Parse(format!("line {}: bad head {:?}", lineno + 1, cols[6])))?;
        cur.tokens.push(DepToken {
            form: cols[1].to_string(),
            upos: cols[3].to_string(),
            head,
            deprel: cols[7].to_string(),
        });
    }
    finish(&mut cur, &mut bank, &mut ordinal)?;
    Ok(bank)
}

pub fn load_conllu(path: &Path) -> Result<DepTreebank> {
    parse_conllu(&std::fs::read_to_string(path)?)
}

/// Serializes with `_` in the unused columns.
pub fn to_conllu(bank: &DepTreebank) -> String {
    let mut out = String::new();
    for (si, s) in bank.sentences.iter().enumerate() {
        match &s.sent_id {
            Some(id) => writeln!(out, "# sent_id = {id}").unwrap(),
            None => writeln!(out, "# sent_id = {}", si + 1).unwrap(),
        }
        writeln!(out, "# text = {}", s.forms().join(" ")).unwrap();
        for (i, t) in s.tokens.iter().enumerate() {
            writeln!(
                out,
                "{}\t{}\t_\t{}\t_\t_\t{}\t{}\t_\t_",
                i + 1,
                t.form,
                t.upos,
                t.head,
                t.deprel
            )
            .unwrap();
        }
        out.push('\n');
    }
    out
}
