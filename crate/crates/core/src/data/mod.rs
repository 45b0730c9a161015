//! Dataset ingestion, vocabularies, mini-batch sampling and synthetic data.

pub mod convert;
mod sampler;
pub mod synth;
mod triples;
mod vocab;

pub use sampler::{sample_minibatch, BatchSampler, SamplerState};
pub use synth::{generate_synthetic, Split, SynthData, SynthExample, SynthSpec};
pub use triples::{
    load_triples, write_records, LoadedTriples, Oov, Schema, TextRecord, Triple, HEADER, RANKING_HEADER, SNLI_LABELS,
};
pub use vocab::{load_embeddings, tokenize, EmbeddingLoad, Vocabulary, OOV_RANGE, UNKNOWN_TOKEN};
