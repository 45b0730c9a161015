use std::collections::BTreeMap;

use super::TrainingConfig;
use crate::data::{Triple, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::{accuracy, group_queries, mean_average_precision};
use crate::models::{attach, build_projection, match_logits, PreparedPairs, ProjectorSpec, Task};
use crate::numcore::{Bindings, Graph, NodeId, ParamSet, Tensor};
use crate::wdreg::objective_node;

/// Prepared pairs with their labels and, for ranking, query ids.
#[derive(Clone, Debug)]
pub struct LabeledPairs {
    pub pairs: PreparedPairs,
    pub labels: Vec<usize>,
    pub query_ids: Option<Vec<String>>,
}

impl LabeledPairs {
    pub fn new(spec: &ProjectorSpec, vocab: &Vocabulary, triples: &[Triple]) -> Result<Self> {
        if triples.is_empty() {
            return Err(Error::Data("empty dataset".into()));
        }
        let query_ids = if triples.iter().all(|t| t.query_id.is_some()) {
            Some(triples.iter().map(|t| t.query_id.clone().unwrap()).collect())
        } else {
            None
        };
        Ok(LabeledPairs {
            pairs: PreparedPairs::new(spec, vocab, triples)?,
            labels: triples.iter().map(|t| t.label).collect(),
            query_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn check_labels(&self, task: Task) -> Result<()> {
        let limit = match task {
            Task::Classification { classes } => classes,
            Task::Ranking => 2,
        };
        if let Some((i, &z)) = self.labels.iter().enumerate().find(|(_, &z)| z >= limit) {
            return Err(Error::Data(format!("pair {i}: label {z} out of range for {task:?}")));
        }
        if task == Task::Ranking && self.query_ids.is_none() {
            return Err(Error::Data("ranking data needs a query id on every pair".into()));
        }
        Ok(())
    }
}

/// Appends `L_m` over the selected pairs.
fn matching_term(
    g: &mut Graph,
    cfg: &TrainingConfig,
    logits: NodeId,
    data: &LabeledPairs,
    idx: &[usize],
) -> Result<NodeId> {
    let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
    Ok(match cfg.task {
        Task::Classification { classes } => {
            if let Some(&z) = labels.iter().find(|&&z| z >= classes) {
                return Err(Error::Data(format!("label {z} out of range for {classes} classes")));
            }
            g.softmax_cross_entropy(logits, labels, cfg.reduction)
        }
        Task::Ranking => {
            if let Some(&z) = labels.iter().find(|&&z| z > 1) {
                return Err(Error::Data(format!("relevance {z} is not 0 or 1")));
            }
            g.sigmoid_bce(logits, labels.into_iter().map(|z| z as f64).collect(), cfg.reduction)
        }
    })
}

/// Graph of the matching loss with `F` and `M` trainable.
pub fn matching_loss(
    f: &ParamSet,
    m: &ParamSet,
    cfg: &TrainingConfig,
    data: &LabeledPairs,
    idx: &[usize],
) -> Result<Graph> {
    let mut g = Graph::new();
    let f_nodes = attach(&mut g, f, true);
    let m_nodes = attach(&mut g, m, true);
    let (hx, hy) = build_projection(&mut g, &cfg.projector, &f_nodes, &data.pairs, idx)?;
    let logits = match_logits(&mut g, &cfg.matcher_spec(), &m_nodes, hx, hy);
    let lm = matching_term(&mut g, cfg, logits, data, idx)?;
    g.set_output("match_loss", lm);
    g.set_loss(lm);
    Ok(g)
}

/// Graph of `L_reg = L_m + λ·O_G` on one batch, with `F` and `M` trainable
/// and the critic held constant. With `λ = 0` the critic term is left out.
#[allow(clippy::too_many_arguments)]
pub fn regularized_loss(
    f: &ParamSet,
    m: &ParamSet,
    critic: &ParamSet,
    cfg: &TrainingConfig,
    data: &LabeledPairs,
    idx: &[usize],
    lambda: f64,
) -> Result<Graph> {
    let mut g = Graph::new();
    let f_nodes = attach(&mut g, f, true);
    let m_nodes = attach(&mut g, m, true);
    let (hx, hy) = build_projection(&mut g, &cfg.projector, &f_nodes, &data.pairs, idx)?;
    let logits = match_logits(&mut g, &cfg.matcher_spec(), &m_nodes, hx, hy);
    let lm = matching_term(&mut g, cfg, logits, data, idx)?;
    g.set_output("match_loss", lm);
    if lambda == 0.0 {
        g.set_loss(lm);
        return Ok(g);
    }
    let g_nodes = attach(&mut g, critic, false);
    let og = objective_node(&mut g, &cfg.critic_spec(), &g_nodes, hx, hy, cfg.reduction);
    g.set_output("critic_objective", og);
    let scaled = g.scale(og, lambda);
    let total = g.add(lm, scaled);
    g.set_loss(total);
    Ok(g)
}

/// Splits a gradient map by parameter-name prefix.
pub(crate) fn take_grads(grads: &mut BTreeMap<String, Tensor>, prefix: &str) -> BTreeMap<String, Tensor> {
    let names: Vec<String> = grads.keys().filter(|k| k.starts_with(prefix)).cloned().collect();
    names
        .into_iter()
        .map(|k| (k.clone(), grads.remove(&k).unwrap()))
        .collect()
}

const PREDICT_CHUNK: usize = 512;

/// Matcher logits for every pair, one row per pair.
pub fn predict_logits(
    f: &ParamSet,
    m: &ParamSet,
    cfg: &TrainingConfig,
    pairs: &PreparedPairs,
) -> Result<Vec<Vec<f64>>> {
    let width = cfg.task.outputs();
    let all: Vec<usize> = (0..pairs.len()).collect();
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in all.chunks(PREDICT_CHUNK) {
        let mut g = Graph::new();
        let f_nodes = attach(&mut g, f, false);
        let m_nodes = attach(&mut g, m, false);
        let (hx, hy) = build_projection(&mut g, &cfg.projector, &f_nodes, pairs, chunk)?;
        let logits = match_logits(&mut g, &cfg.matcher_spec(), &m_nodes, hx, hy);
        g.set_output("logits", logits);
        let vals = g.evaluate(&Bindings::new())?;
        out.extend(vals["logits"].data().chunks_exact(width).map(<[f64]>::to_vec));
    }
    Ok(out)
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Accuracy for classification, MAP for ranking.
pub fn dev_metric(f: &ParamSet, m: &ParamSet, cfg: &TrainingConfig, data: &LabeledPairs) -> Result<f64> {
    let logits = predict_logits(f, m, cfg, &data.pairs)?;
    match cfg.task {
        Task::Classification { .. } => {
            let preds: Vec<usize> = logits.iter().map(|r| argmax(r)).collect();
            accuracy(&preds, &data.labels)
        }
        Task::Ranking => {
            let ids = data
                .query_ids
                .as_ref()
                .ok_or_else(|| Error::Data("ranking data without query ids".into()))?;
            let scores: Vec<f64> = logits.iter().map(|r| r[0]).collect();
            mean_average_precision(&group_queries(ids, &scores, &data.labels)?)
        }
    }
}

/// Scalar value of an evaluated loss graph output.
pub(crate) fn scalar(outputs: &BTreeMap<String, Tensor>, name: &str) -> f64 {
    outputs[name].item()
}
