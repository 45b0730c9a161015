use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

pub const UNKNOWN_TOKEN: &str = "<unk>";
/// Half-width of the uniform range for vectors of tokens missing from the
/// embedding file.
pub const OOV_RANGE: f64 = 0.05;

/// Token ids and their frozen embedding rows. Id 0 is reserved for
/// padding/unknown and maps to the zero vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    index: HashMap<String, usize>,
    tokens: Vec<String>,
    rows: Vec<f64>,
    dim: usize,
}

/// Lowercase and split on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

impl Vocabulary {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dim must be positive");
        Vocabulary {
            index: HashMap::from([(UNKNOWN_TOKEN.to_string(), 0)]),
            tokens: vec![UNKNOWN_TOKEN.to_string()],
            rows: vec![0.0; dim],
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn row(&self, id: usize) -> &[f64] {
        &self.rows[id * self.dim..(id + 1) * self.dim]
    }

    /// Adds `token` with the given vector. Returns `false` (and keeps the
    /// existing row) if the token is already present.
    pub fn insert(&mut self, token: &str, vector: &[f64]) -> bool {
        assert_eq!(vector.len(), self.dim);
        if self.index.contains_key(token) {
            return false;
        }
        self.index.insert(token.to_string(), self.tokens.len());
        self.tokens.push(token.to_string());
        self.rows.extend_from_slice(vector);
        true
    }

    /// Id of `token`, adding it with a random vector in `[-0.05, 0.05]` when
    /// it is new.
    pub fn get_or_insert_random(&mut self, token: &str, rng: &mut impl Rng) -> usize {
        if let Some(id) = self.id(token) {
            return id;
        }
        let v: Vec<f64> = (0..self.dim)
            .map(|_| rng.random_range(-OOV_RANGE..=OOV_RANGE))
            .collect();
        self.insert(token, &v);
        self.tokens.len() - 1
    }

    /// Writes every token except the reserved one in GloVe text format.
    pub fn write_glove(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for id in 1..self.len() {
            let mut line = self.tokens[id].clone();
            for v in self.row(id) {
                line.push(' ');
                line.push_str(&v.to_string());
            }
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Outcome of reading an embedding file.
#[derive(Clone, Debug)]
pub struct EmbeddingLoad {
    pub vocab: Vocabulary,
    pub duplicates: usize,
}

/// Reads GloVe-format text: `token v1 .. v_dim` per line. The first
/// occurrence of a duplicated token wins.
pub fn load_embeddings(path: &Path, dim: usize) -> Result<EmbeddingLoad> {
    if dim == 0 {
        return Err(Error::config("embedding_dim", "must be positive"));
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut vocab = Vocabulary::new(dim);
    let mut duplicates = 0;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(' ').filter(|s| !s.is_empty());
        let token = parts.next().expect("non-empty line");
        let values: Vec<&str> = parts.collect();
        if values.len() != dim {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                msg: format!("expected {dim} components, found {}", values.len()),
            });
        }
        let mut vector = Vec::with_capacity(dim);
        for v in values {
            let x: f64 = v.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                msg: format!("`{v}` is not a number"),
            })?;
            if !x.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno,
                    msg: format!("non-finite component `{v}`"),
                });
            }
            vector.push(x);
        }
        let token = token.to_lowercase();
        if !vocab.insert(&token, &vector) {
            duplicates += 1;
            log::warn!(
                "{}:{lineno}: duplicate token `{token}` ignored, keeping first occurrence",
                path.display()
            );
        }
    }
    Ok(EmbeddingLoad { vocab, duplicates })
}
