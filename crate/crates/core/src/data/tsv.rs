//! `label<TAB>text` classification files.

use std::path::Path;

use crate::error::{Error, Result};

/// One `(label, text)` per non-blank line. The first tab separates label from
/// text; the text may contain further tabs.
pub fn parse_tsv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (label, body) = line
            .split_once('\t')
            .ok_or_else(|| Error::Parse(format!("line {}: missing TAB between label and text", i + 1)))?;
        let label = label.trim();
        if label.is_empty() {
            return Err(Error::Parse(format!("line {}: empty label", i + 1)));
        }
        out.push((label.to_string(), body.to_string()));
    }
    Ok(out)
}

pub fn load_tsv(path: &Path) -> Result<Vec<(String, String)>> {
    parse_tsv(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_label_and_text() {
        let rows = parse_tsv("pos\tgreat film\n\nneg\tdull\tand long\r\n").unwrap();
        assert_eq!(
            rows,
            vec![
                ("pos".to_string(), "great film".to_string()),
                ("neg".to_string(), "dull\tand long".to_string())
            ]
        );
    }

    #[test]
    fn missing_tab_names_line() {
        let err = parse_tsv("a\tb\nno tab here\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }
}
