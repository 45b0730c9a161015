//! Synthetic asymmetric-domain matching data with known latent geometry.
//!
//! Each side of a pair has a latent point: a topic mean plus isotropic
//! noise. Second-side latents, and the second domain's word vectors, are
//! shifted by `shift` along the first latent axis, so the two domains'
//! latent distributions differ by exactly that translation. Tokens are drawn
//! from the side's own vocabulary with probability decreasing in squared
//! distance between word vector and latent point. A pair is positive iff the
//! two topics agree.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::triples::{write_records, Schema, TextRecord, Triple};
use super::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::rng::{child, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub latent_dim: usize,
    /// Translation of the second domain along latent axis 0.
    pub shift: f64,
    pub topics: usize,
    /// Standard deviation of topic means.
    pub topic_scale: f64,
    /// Per-example latent noise.
    pub latent_noise: f64,
    pub vocab_a: usize,
    pub vocab_b: usize,
    /// Spread of word vectors around their topic mean.
    pub word_noise: f64,
    /// Token sampling temperature (in latent distance units).
    pub temperature: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub pairs: usize,
    pub dev_pairs: usize,
    pub test_pairs: usize,
    pub positive_rate: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            latent_dim: 8,
            shift: 2.0,
            topics: 8,
            topic_scale: 1.5,
            latent_noise: 0.5,
            vocab_a: 400,
            vocab_b: 400,
            word_noise: 0.6,
            temperature: 0.5,
            min_len: 4,
            max_len: 10,
            pairs: 5000,
            dev_pairs: 1000,
            test_pairs: 1000,
            positive_rate: 0.5,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: usize| {
            if v == 0 {
                Err(Error::config(field, "must be >= 1"))
            } else {
                Ok(())
            }
        };
        positive("latent_dim", self.latent_dim)?;
        positive("vocab_a", self.vocab_a)?;
        positive("vocab_b", self.vocab_b)?;
        positive("pairs", self.pairs)?;
        positive("dev_pairs", self.dev_pairs)?;
        positive("test_pairs", self.test_pairs)?;
        positive("min_len", self.min_len)?;
        if self.topics < 2 {
            return Err(Error::config("topics", "need at least 2 topics"));
        }
        if self.max_len < self.min_len {
            return Err(Error::config("max_len", "must be >= min_len"));
        }
        if !self.shift.is_finite() || self.shift < 0.0 {
            return Err(Error::config(
                "shift",
                format!("must be finite and >= 0, got {}", self.shift),
            ));
        }
        for (field, v) in [
            ("topic_scale", self.topic_scale),
            ("latent_noise", self.latent_noise),
            ("word_noise", self.word_noise),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(field, "must be finite and >= 0"));
            }
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::config("temperature", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.positive_rate) {
            return Err(Error::config("positive_rate", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Two-class schema used for generated labels (`0` = mismatch).
    pub fn schema() -> Schema {
        Schema::Classification {
            labels: vec!["0".into(), "1".into()],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthExample {
    pub x: Vec<usize>,
    pub y: Vec<usize>,
    pub label: usize,
    pub topic_x: usize,
    pub topic_y: usize,
    pub latent_x: Vec<f64>,
    pub latent_y: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthData {
    pub spec: SynthSpec,
    pub vocab: Vocabulary,
    pub train: Vec<SynthExample>,
    pub dev: Vec<SynthExample>,
    pub test: Vec<SynthExample>,
}

impl SynthData {
    pub fn split(&self, split: Split) -> &[SynthExample] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn triples(&self, split: Split) -> Vec<Triple> {
        self.split(split)
            .iter()
            .map(|e| Triple {
                x: e.x.clone(),
                y: e.y.clone(),
                label: e.label,
                query_id: None,
            })
            .collect()
    }

    /// Latents projected on the shift axis, for one side.
    pub fn projected_latents(&self, split: Split, second_side: bool) -> Vec<f64> {
        self.split(split)
            .iter()
            .map(|e| if second_side { e.latent_y[0] } else { e.latent_x[0] })
            .collect()
    }

    pub fn records(&self, split: Split) -> Vec<TextRecord> {
        let text = |ids: &[usize]| {
            ids.iter()
                .map(|&i| self.vocab.token(i).expect("generated id"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        self.split(split)
            .iter()
            .map(|e| TextRecord {
                text_a: text(&e.x),
                text_b: text(&e.y),
                label: e.label.to_string(),
                query_id: None,
            })
            .collect()
    }

    /// Writes `train.tsv`, `dev.tsv`, `test.tsv`, `embeddings.txt` and
    /// `latents.csv` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for split in [Split::Train, Split::Dev, Split::Test] {
            write_records(&dir.join(format!("{}.tsv", split.name())), &self.records(split))?;
        }
        self.vocab.write_glove(&dir.join("embeddings.txt"))?;
        let path = dir.join("latents.csv");
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(&path, e);
        let dims: Vec<String> = (1..=self.spec.latent_dim).map(|i| format!("l{i}")).collect();
        writeln!(w, "split,pair_index,side,topic,{}", dims.join(",")).map_err(io)?;
        for split in [Split::Train, Split::Dev, Split::Test] {
            for (i, e) in self.split(split).iter().enumerate() {
                for (side, topic, latent) in [("X", e.topic_x, &e.latent_x), ("Y", e.topic_y, &e.latent_y)] {
                    let vals: Vec<String> = latent.iter().map(f64::to_string).collect();
                    writeln!(w, "{},{i},{side},{topic},{}", split.name(), vals.join(",")).map_err(io)?;
                }
            }
        }
        w.flush().map_err(io)
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        })
        .collect()
}

struct Domain {
    first_id: usize,
    vectors: Vec<Vec<f64>>,
}

impl Domain {
    fn sample_tokens(&self, rng: &mut ChaCha8Rng, latent: &[f64], len: usize, temperature: f64) -> Vec<usize> {
        let logits: Vec<f64> = self
            .vectors
            .iter()
            .map(|v| {
                let d2: f64 = v.iter().zip(latent).map(|(a, b)| (a - b) * (a - b)).sum();
                -d2 / (2.0 * temperature * temperature)
            })
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut cumulative = Vec::with_capacity(logits.len());
        let mut total = 0.0;
        for l in &logits {
            total += (l - m).exp();
            cumulative.push(total);
        }
        (0..len)
            .map(|_| {
                let u = rng.random_range(0.0..total);
                let k = cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1);
                self.first_id + k
            })
            .collect()
    }
}

/// Generates train/dev/test splits deterministically from `(spec, seed)`.
pub fn generate_synthetic(spec: &SynthSpec, seed: u64) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = child(seed, Stream::Synth);
    let d = spec.latent_dim;
    let means: Vec<Vec<f64>> = (0..spec.topics)
        .map(|_| normal_vec(&mut rng, d, spec.topic_scale))
        .collect();

    let mut vocab = Vocabulary::new(d);
    let mut make_domain = |rng: &mut ChaCha8Rng, prefix: &str, size: usize, shift: f64| {
        let first_id = vocab.len();
        let vectors: Vec<Vec<f64>> = (0..size)
            .map(|i| {
                let mut v = normal_vec(rng, d, spec.word_noise);
                for (a, m) in v.iter_mut().zip(&means[i % spec.topics]) {
                    *a += m;
                }
                v[0] += shift;
                v
            })
            .collect();
        for (i, v) in vectors.iter().enumerate() {
            vocab.insert(&format!("{prefix}{i}"), v);
        }
        Domain { first_id, vectors }
    };
    let dom_a = make_domain(&mut rng, "a", spec.vocab_a, 0.0);
    let dom_b = make_domain(&mut rng, "b", spec.vocab_b, spec.shift);

    let split = |rng: &mut ChaCha8Rng, n: usize| -> Vec<SynthExample> {
        let positives = (spec.positive_rate * n as f64).round() as usize;
        let mut labels: Vec<usize> = (0..n).map(|i| usize::from(i < positives)).collect();
        labels.shuffle(rng);
        labels
            .into_iter()
            .map(|label| {
                let topic_x = rng.random_range(0..spec.topics);
                let topic_y = if label == 1 {
                    topic_x
                } else {
                    (topic_x + rng.random_range(1..spec.topics)) % spec.topics
                };
                let mut latent = |topic: usize, shift: f64| {
                    let mut v = normal_vec(rng, d, spec.latent_noise);
                    for (a, m) in v.iter_mut().zip(&means[topic]) {
                        *a += m;
                    }
                    v[0] += shift;
                    v
                };
                let latent_x = latent(topic_x, 0.0);
                let latent_y = latent(topic_y, spec.shift);
                let len_x = rng.random_range(spec.min_len..=spec.max_len);
                let len_y = rng.random_range(spec.min_len..=spec.max_len);
                let x = dom_a.sample_tokens(rng, &latent_x, len_x, spec.temperature);
                let y = dom_b.sample_tokens(rng, &latent_y, len_y, spec.temperature);
                SynthExample {
                    x,
                    y,
                    label,
                    topic_x,
                    topic_y,
                    latent_x,
                    latent_y,
                }
            })
            .collect()
    };
    let train = split(&mut rng, spec.pairs);
    let dev = split(&mut rng, spec.dev_pairs);
    let test = split(&mut rng, spec.test_pairs);
    Ok(SynthData {
        spec: spec.clone(),
        vocab,
        train,
        dev,
        test,
    })
}
