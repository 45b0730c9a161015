//! The three networks: feature projection, critic and matcher. Each is a
//! spec, a parameter layout, and a builder that appends its computation to a
//! [`Graph`].

mod critic;
mod matcher;
mod projector;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numcore::{Graph, NodeId, ParamSet, Tensor};

pub use critic::{critic_lipschitz_bound, critic_score, critic_scores, CriticActivation, CriticSpec};
pub use matcher::{match_logits, match_predict, MatcherSpec, Task};
pub use projector::{
    build_projection, project, project_all, project_batch, EncoderKind, FeatureMatrix, PreparedPairs, ProjectorSpec,
};

/// Projected features of one pair.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePair {
    pub hx: Vec<f64>,
    pub hy: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight { fan_in: usize, fan_out: usize },
    Bias,
}

/// Named parameter shapes a network needs.
pub trait ParamLayout {
    fn layout(&self) -> Vec<(String, Vec<usize>, ParamKind)>;
}

pub(crate) fn dense_layout(prefix: &str, dims: &[usize]) -> Vec<(String, Vec<usize>, ParamKind)> {
    let mut out = Vec::new();
    for (i, w) in dims.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        out.push((
            format!("{prefix}{i}.w"),
            vec![fan_in, fan_out],
            ParamKind::Weight { fan_in, fan_out },
        ));
        out.push((format!("{prefix}{i}.b"), vec![fan_out], ParamKind::Bias));
    }
    out
}

/// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
pub fn init_params(spec: &impl ParamLayout, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    spec.layout()
        .into_iter()
        .map(|(name, shape, kind)| {
            let t = match kind {
                ParamKind::Weight { fan_in, fan_out } => {
                    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let n = shape.iter().product();
                    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
                    Tensor::new(shape, data).expect("finite init")
                }
                ParamKind::Bias => Tensor::zeros(&shape),
            };
            (name, t)
        })
        .collect()
}

/// Checks that `params` has exactly the names and shapes of `spec`.
pub fn check_layout(spec: &impl ParamLayout, params: &ParamSet, what: &str) -> crate::Result<()> {
    let layout = spec.layout();
    if layout.len() != params.len() {
        return Err(crate::Error::Shape(format!(
            "{what}: expected {} tensors, found {}",
            layout.len(),
            params.len()
        )));
    }
    for (name, shape, _) in layout {
        match params.get(&name) {
            Some(t) if t.shape() == shape.as_slice() => {}
            Some(t) => {
                return Err(crate::Error::Shape(format!(
                    "{what}: `{name}` has shape {:?}, expected {shape:?}",
                    t.shape()
                )))
            }
            None => return Err(crate::Error::Shape(format!("{what}: missing `{name}`"))),
        }
    }
    Ok(())
}

/// Graph handles of a parameter set.
pub type ParamNodes = BTreeMap<String, NodeId>;

/// Adds every tensor of `params` to `g`, as trainable leaves or as constants.
pub fn attach(g: &mut Graph, params: &ParamSet, trainable: bool) -> ParamNodes {
    params
        .iter()
        .map(|(name, t)| {
            let id = if trainable {
                g.param(name, t.clone())
            } else {
                g.constant(t.clone())
            };
            (name.clone(), id)
        })
        .collect()
}

/// Dense stack `x·W_i + b_i`, each followed by `act`.
pub(crate) fn dense_stack(
    g: &mut Graph,
    nodes: &ParamNodes,
    prefix: &str,
    layers: usize,
    mut x: NodeId,
    act: impl Fn(&mut Graph, NodeId, usize) -> NodeId,
) -> NodeId {
    for i in 0..layers {
        let w = nodes[&format!("{prefix}{i}.w")];
        let b = nodes[&format!("{prefix}{i}.b")];
        let h = g.matmul(x, w);
        let h = g.add(h, b);
        x = act(g, h, i);
    }
    x
}
