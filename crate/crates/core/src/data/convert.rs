//! Converters from public benchmark layouts to the tab-separated record format.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use super::triples::TextRecord;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceFormat {
    /// SNLI `.jsonl` (`sentence1`, `sentence2`, `gold_label`).
    SnliJsonl,
    /// SciTail `tsv_format` files: `premise<TAB>hypothesis<TAB>label`, no header.
    SciTailTsv,
    /// WikiQA `.tsv` with header `QuestionID Question DocumentID DocumentTitle SentenceID Sentence Label`.
    WikiQaTsv,
}

impl std::str::FromStr for SourceFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "snli" => Ok(SourceFormat::SnliJsonl),
            "scitail" => Ok(SourceFormat::SciTailTsv),
            "wikiqa" => Ok(SourceFormat::WikiQaTsv),
            other => Err(Error::config("format", format!("unknown source format `{other}`"))),
        }
    }
}

#[derive(Deserialize)]
struct SnliRow {
    sentence1: String,
    sentence2: String,
    gold_label: String,
}

pub fn convert(path: &Path, format: SourceFormat) -> Result<Vec<TextRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        match format {
            SourceFormat::SnliJsonl => {
                let row: SnliRow = serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
                out.push(TextRecord {
                    text_a: row.sentence1,
                    text_b: row.sentence2,
                    label: row.gold_label,
                    query_id: None,
                });
            }
            SourceFormat::SciTailTsv => {
                let cols: Vec<&str> = line.split('\t').collect();
                if cols.len() != 3 {
                    return Err(parse_err(lineno, format!("expected 3 fields, found {}", cols.len())));
                }
                out.push(TextRecord {
                    text_a: cols[0].to_string(),
                    text_b: cols[1].to_string(),
                    label: cols[2].trim().to_string(),
                    query_id: None,
                });
            }
            SourceFormat::WikiQaTsv => {
                if lineno == 1 && line.starts_with("QuestionID") {
                    continue;
                }
                let cols: Vec<&str> = line.split('\t').collect();
                if cols.len() != 7 {
                    return Err(parse_err(lineno, format!("expected 7 fields, found {}", cols.len())));
                }
                out.push(TextRecord {
                    text_a: cols[1].to_string(),
                    text_b: cols[5].to_string(),
                    label: cols[6].trim().to_string(),
                    query_id: Some(cols[0].to_string()),
                });
            }
        }
    }
    Ok(out)
}
