use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{tokenize, Vocabulary};
use crate::error::{Error, Result};

/// One training record: two token-id sequences and their label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Triple {
    pub x: Vec<usize>,
    pub y: Vec<usize>,
    /// Class index, or binary relevance for ranking.
    pub label: usize,
    pub query_id: Option<String>,
}

/// SNLI label order.
pub const SNLI_LABELS: [&str; 3] = ["entailment", "neutral", "contradiction"];

/// How label columns are read.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Schema {
    /// Label strings mapped to indices in list order; `-` rows are skipped.
    Classification { labels: Vec<String> },
    /// Binary relevance `0`/`1` plus a mandatory query id column.
    Ranking,
}

impl Schema {
    pub fn snli() -> Self {
        Schema::Classification {
            labels: SNLI_LABELS.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn num_classes(&self) -> Option<usize> {
        match self {
            Schema::Classification { labels } => Some(labels.len()),
            Schema::Ranking => None,
        }
    }
}

pub const HEADER: &str = "text_a\ttext_b\tlabel";
pub const RANKING_HEADER: &str = "text_a\ttext_b\tlabel\tquery_id";

#[derive(Clone, Debug)]
pub struct LoadedTriples {
    pub triples: Vec<Triple>,
    /// Rows dropped because their label was `-`.
    pub skipped: usize,
}

/// How tokens missing from the vocabulary are handled.
pub enum Oov<'a, R: Rng> {
    /// Add them with a random frozen vector.
    Extend(&'a mut R),
    /// Map them to the reserved unknown id.
    Unknown,
}

/// Reads a tab-separated dataset with a one-line header:
/// `text_a<TAB>text_b<TAB>label[<TAB>query_id]`.
pub fn load_triples<R: Rng>(
    path: &Path,
    schema: &Schema,
    vocab: &mut Vocabulary,
    mut oov: Oov<'_, R>,
) -> Result<LoadedTriples> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut triples = Vec::new();
    let mut skipped = 0;
    let mut lines = BufReader::new(file).lines().enumerate();
    match lines.next() {
        Some((_, Ok(h))) if h.trim_end().starts_with(HEADER) => {}
        Some((_, Ok(h))) => {
            return Err(parse_err(1, format!("expected header `{HEADER}`, found `{h}`")));
        }
        Some((_, Err(e))) => return Err(Error::io(path, e)),
        None => return Err(parse_err(1, "missing header".into())),
    }
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 3 || cols.len() > 4 {
            return Err(parse_err(
                lineno,
                format!("expected 3 or 4 tab-separated fields, found {}", cols.len()),
            ));
        }
        let raw_label = cols[2].trim();
        let (label, query_id) = match schema {
            Schema::Classification { labels } => {
                if raw_label == "-" {
                    skipped += 1;
                    continue;
                }
                let idx = labels
                    .iter()
                    .position(|l| l == raw_label)
                    .ok_or_else(|| parse_err(lineno, format!("unknown label `{raw_label}`")))?;
                (idx, cols.get(3).map(|q| q.trim().to_string()))
            }
            Schema::Ranking => {
                let rel = match raw_label {
                    "0" => 0,
                    "1" => 1,
                    other => return Err(parse_err(lineno, format!("relevance must be 0 or 1, found `{other}`"))),
                };
                let qid = cols
                    .get(3)
                    .map(|q| q.trim())
                    .filter(|q| !q.is_empty())
                    .ok_or_else(|| parse_err(lineno, "ranking rows need a query_id".into()))?;
                (rel, Some(qid.to_string()))
            }
        };
        let mut ids = |text: &str, side: &str| -> Result<Vec<usize>> {
            let toks = tokenize(text);
            if toks.is_empty() {
                return Err(parse_err(lineno, format!("empty {side} sequence")));
            }
            Ok(toks
                .iter()
                .map(|t| match &mut oov {
                    Oov::Extend(rng) => vocab.get_or_insert_random(t, *rng),
                    Oov::Unknown => vocab.id(t).unwrap_or(0),
                })
                .collect())
        };
        let x = ids(cols[0], "text_a")?;
        let y = ids(cols[1], "text_b")?;
        triples.push(Triple { x, y, label, query_id });
    }
    Ok(LoadedTriples { triples, skipped })
}

/// A dataset row in text form, as written by converters and the generator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextRecord {
    pub text_a: String,
    pub text_b: String,
    pub label: String,
    pub query_id: Option<String>,
}

pub fn write_records(path: &Path, records: &[TextRecord]) -> Result<()> {
    let ranking = records.iter().any(|r| r.query_id.is_some());
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", if ranking { RANKING_HEADER } else { HEADER }).map_err(io)?;
    for r in records {
        let clean = |s: &str| s.replace(['\t', '\n', '\r'], " ");
        write!(w, "{}\t{}\t{}", clean(&r.text_a), clean(&r.text_b), r.label).map_err(io)?;
        if ranking {
            write!(w, "\t{}", r.query_id.as_deref().unwrap_or("")).map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{child, Stream};
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn load(contents: &str, schema: &Schema) -> Result<(LoadedTriples, Vocabulary)> {
        let f = write(contents);
        let mut vocab = Vocabulary::new(2);
        let mut rng = child(0, Stream::Init);
        let out = load_triples(f.path(), schema, &mut vocab, Oov::Extend(&mut rng))?;
        Ok((out, vocab))
    }

    #[test]
    fn snli_labels_and_dash_skip() {
        let (out, vocab) = load(
            "text_a\ttext_b\tlabel\nA man sleeps\tA person rests\tentailment\nx\ty\t-\nx\ty\tcontradiction\n",
            &Schema::snli(),
        )
        .unwrap();
        assert_eq!(out.skipped, 1);
        assert_eq!(out.triples.len(), 2);
        assert_eq!(out.triples[0].label, 0);
        assert_eq!(out.triples[1].label, 2);
        assert!(out
            .triples
            .iter()
            .all(|t| t.x.iter().chain(&t.y).all(|&i| i < vocab.len())));
        assert_eq!(vocab.id("man"), Some(out.triples[0].x[1]));
    }

    #[test]
    fn ranking_row_with_query_id() {
        let (out, _) = load(
            "text_a\ttext_b\tlabel\tquery_id\nwho\tsomeone\t1\tq7\n",
            &Schema::Ranking,
        )
        .unwrap();
        assert_eq!(out.triples[0].label, 1);
        assert_eq!(out.triples[0].query_id.as_deref(), Some("q7"));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = load(
            "text_a\ttext_b\tlabel\na\tb\tentailment\na\tb\tmaybe\n",
            &Schema::snli(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = load("text_a\ttext_b\tlabel\nonly one field\n", &Schema::snli()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = load("text_a\ttext_b\tlabel\n \tb\tneutral\n", &Schema::snli()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = load("text_a\ttext_b\tlabel\tquery_id\nq\ta\t1\n", &Schema::Ranking).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn unknown_policy_maps_to_reserved_id() {
        let f = write("text_a\ttext_b\tlabel\nfoo\tbar\tneutral\n");
        let mut vocab = Vocabulary::new(2);
        let out = load_triples::<ChaCha8Rng>(f.path(), &Schema::snli(), &mut vocab, Oov::Unknown).unwrap();
        assert_eq!(out.triples[0].x, vec![0]);
        assert_eq!(vocab.len(), 1);
    }

    #[test]
    fn written_records_load_back() {
        let recs = vec![TextRecord {
            text_a: "a b".into(),
            text_b: "c".into(),
            label: "neutral".into(),
            query_id: None,
        }];
        let f = tempfile::NamedTempFile::new().unwrap();
        write_records(f.path(), &recs).unwrap();
        let mut vocab = Vocabulary::new(2);
        let mut rng = child(0, Stream::Init);
        let out = load_triples(f.path(), &Schema::snli(), &mut vocab, Oov::Extend(&mut rng)).unwrap();
        assert_eq!(out.triples[0].label, 1);
        assert_eq!(out.triples[0].x.len(), 2);
    }
}
