#![allow(dead_code)]

pub mod oracle;

use wdmatch::data::{generate_synthetic, Split, SynthData, SynthSpec};
use wdmatch::models::{ProjectorSpec, Task};
use wdmatch::numcore::{ParamSet, Tensor};
use wdmatch::trainer::{LabeledPairs, TrainingConfig};

pub struct Task2 {
    pub data: SynthData,
    pub train: LabeledPairs,
    pub dev: LabeledPairs,
    pub test: LabeledPairs,
}

pub fn synth(pairs: usize, seed: u64) -> Task2 {
    let spec = SynthSpec {
        pairs,
        dev_pairs: pairs / 4,
        test_pairs: pairs / 4,
        ..Default::default()
    };
    let data = generate_synthetic(&spec, seed).unwrap();
    let proj = projector(spec.latent_dim, 8);
    let split = |s| LabeledPairs::new(&proj, &data.vocab, &data.triples(s)).unwrap();
    Task2 {
        train: split(Split::Train),
        dev: split(Split::Dev),
        test: split(Split::Test),
        data,
    }
}

pub fn projector(embedding_dim: usize, k: usize) -> ProjectorSpec {
    ProjectorSpec {
        embedding_dim,
        feature_dim: k,
        ..Default::default()
    }
}

/// A small, fast config for the binary synthetic task.
pub fn small_config(seed: u64) -> TrainingConfig {
    TrainingConfig {
        n1: 32,
        n2: 32,
        k: 2,
        lambda: 0.01,
        epochs: 3,
        patience: 0,
        seed,
        converge_steps: 20,
        n_eval: 40,
        projector: projector(8, 8),
        critic_hidden: 16,
        matcher_hidden: vec![8],
        task: Task::Classification { classes: 2 },
        ..Default::default()
    }
}

pub fn zeros_like(p: &ParamSet) -> ParamSet {
    p.iter().map(|(n, t)| (n.clone(), Tensor::zeros(t.shape()))).collect()
}
