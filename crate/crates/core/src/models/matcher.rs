use serde::{Deserialize, Serialize};

use super::{attach, dense_layout, dense_stack, FeaturePair, ParamKind, ParamLayout, ParamNodes};
use crate::error::{Error, Result};
use crate::numcore::{Bindings, Graph, NodeId, ParamSet, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Task {
    Classification {
        classes: usize,
    },
    /// Point-wise ranking: one relevance logit per pair.
    Ranking,
}

impl Task {
    pub fn outputs(&self) -> usize {
        match *self {
            Task::Classification { classes } => classes,
            Task::Ranking => 1,
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatcherSpec {
    pub feature_dim: usize,
    pub task: Task,
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    /// Feed `[hx, hy, hx*hy, |hx-hy|]` instead of `[hx, hy]`.
    #[serde(default = "yes")]
    pub enrich: bool,
}

impl MatcherSpec {
    fn input_dim(&self) -> usize {
        self.feature_dim * if self.enrich { 4 } else { 2 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::config("matcher.feature_dim", "must be > 0"));
        }
        if self.task.outputs() == 0 {
            return Err(Error::config("matcher.task.classes", "must be > 0"));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::config("matcher.hidden_dims", "widths must be > 0"));
        }
        Ok(())
    }
}

impl ParamLayout for MatcherSpec {
    fn layout(&self) -> Vec<(String, Vec<usize>, ParamKind)> {
        let mut dims = vec![self.input_dim()];
        dims.extend(&self.hidden_dims);
        dims.push(self.task.outputs());
        dense_layout("m.dense", &dims)
    }
}

/// Appends the matcher head over `[n, K]` feature nodes; returns
/// `[n, outputs]` logits. Hidden layers use the rectifier, the last is linear.
pub fn match_logits(g: &mut Graph, spec: &MatcherSpec, nodes: &ParamNodes, hx: NodeId, hy: NodeId) -> NodeId {
    let input = if spec.enrich {
        let prod = g.mul(hx, hy);
        let diff = g.sub(hx, hy);
        let dist = g.abs(diff);
        g.concat_cols(&[hx, hy, prod, dist])
    } else {
        g.concat_cols(&[hx, hy])
    };
    let last = spec.hidden_dims.len();
    dense_stack(g, nodes, "m.dense", last + 1, input, move |g, x, i| {
        if i < last {
            g.relu(x)
        } else {
            x
        }
    })
}

pub fn match_predict(params: &ParamSet, spec: &MatcherSpec, fp: &FeaturePair) -> Result<Vec<f64>> {
    let k = spec.feature_dim;
    if fp.hx.len() != k || fp.hy.len() != k {
        return Err(Error::Shape(format!(
            "matcher expects two {k}-vectors, got {} and {}",
            fp.hx.len(),
            fp.hy.len()
        )));
    }
    let mut g = Graph::new();
    let nodes = attach(&mut g, params, false);
    let hx = g.constant(Tensor::matrix(1, k, fp.hx.clone())?);
    let hy = g.constant(Tensor::matrix(1, k, fp.hy.clone())?);
    let out = match_logits(&mut g, spec, &nodes, hx, hy);
    g.set_output("logits", out);
    Ok(g.evaluate(&Bindings::new())?["logits"].data().to_vec())
}
