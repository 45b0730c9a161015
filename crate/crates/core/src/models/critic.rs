use serde::{Deserialize, Serialize};

use super::{attach, dense_layout, dense_stack, ParamKind, ParamLayout, ParamNodes};
use crate::error::{Error, Result};
use crate::numcore::{Bindings, Graph, NodeId, ParamSet, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticActivation {
    #[default]
    Relu,
    /// No nonlinearity: the critic collapses to a linear map. Test use.
    Identity,
}

fn default_hidden() -> usize {
    128
}

/// Two-layer critic `R^K -> R`: one hidden layer, then a linear scalar output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticSpec {
    pub feature_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default)]
    pub activation: CriticActivation,
}

impl CriticSpec {
    pub fn new(feature_dim: usize) -> Self {
        CriticSpec {
            feature_dim,
            hidden: default_hidden(),
            activation: CriticActivation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::config("critic.feature_dim", "must be > 0"));
        }
        if self.hidden == 0 {
            return Err(Error::config("critic.hidden", "must be > 0"));
        }
        Ok(())
    }
}

impl ParamLayout for CriticSpec {
    fn layout(&self) -> Vec<(String, Vec<usize>, ParamKind)> {
        dense_layout("g.dense", &[self.feature_dim, self.hidden, 1])
    }
}

/// Appends `G(h)` for every row of an `[n, K]` node; returns `[n, 1]`.
pub fn critic_scores(g: &mut Graph, spec: &CriticSpec, nodes: &ParamNodes, h: NodeId) -> NodeId {
    let act = spec.activation;
    dense_stack(g, nodes, "g.dense", 2, h, move |g, x, layer| match (layer, act) {
        (0, CriticActivation::Relu) => g.relu(x),
        _ => x,
    })
}

pub fn critic_score(params: &ParamSet, spec: &CriticSpec, h: &[f64]) -> Result<f64> {
    if h.len() != spec.feature_dim {
        return Err(Error::Shape(format!(
            "critic expects a {}-vector, got {}",
            spec.feature_dim,
            h.len()
        )));
    }
    let mut g = Graph::new();
    let nodes = attach(&mut g, params, false);
    let x = g.constant(Tensor::matrix(1, h.len(), h.to_vec())?);
    let s = critic_scores(&mut g, spec, &nodes, x);
    g.set_output("score", s);
    Ok(g.evaluate(&Bindings::new())?["score"].data()[0])
}

/// Upper bound on the critic's Lipschitz constant with respect to the ℓ₁
/// norm on its input: `max_i Σ_j |v_j|·|W_ij|`. The rectifier is
/// 1-Lipschitz, so this holds for both activations. With every weight in
/// `[-c, c]` it never exceeds `c²·hidden`.
pub fn critic_lipschitz_bound(params: &ParamSet, spec: &CriticSpec) -> Result<f64> {
    super::check_layout(spec, params, "critic")?;
    let w = params.get("g.dense0.w").expect("checked").data();
    let v = params.get("g.dense1.w").expect("checked").data();
    let h = spec.hidden;
    let bound = w
        .chunks_exact(h)
        .map(|row| row.iter().zip(v).map(|(a, b)| a.abs() * b.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    Ok(bound)
}
