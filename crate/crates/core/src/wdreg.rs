//! The regularizer branch: the critic objective `O_G`, its k-step clipped
//! ascent, and Wasserstein-distance estimates from a converged critic.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::BatchSampler;
use crate::error::{Error, Result};
use crate::models::{
    attach, critic_scores, init_params, project_batch, CriticSpec, FeatureMatrix, ParamNodes, PreparedPairs,
    ProjectorSpec,
};
use crate::numcore::{
    adam_step, clip_params, AdamHyper, AdamState, Bindings, Direction, Graph, NodeId, ParamSet, Reduction,
};

/// Empirical samples of the two projected feature distributions, paired by
/// training example.
pub type CriticBatch = FeatureMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizerConfig {
    /// Critic updates per round.
    pub k: usize,
    /// Critic mini-batch size.
    pub n1: usize,
    /// Critic learning rate.
    pub lr: f64,
    /// Clip threshold.
    pub clip: f64,
    pub reduction: Reduction,
}

impl RegularizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n1 == 0 {
            return Err(Error::config("n1", "must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr_critic", format!("must be > 0, got {}", self.lr)));
        }
        if !(self.clip > 0.0 && self.clip.is_finite()) {
            return Err(Error::config("clip", format!("must be > 0, got {}", self.clip)));
        }
        Ok(())
    }
}

/// Critic parameters together with their optimizer state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Critic {
    pub spec: CriticSpec,
    pub params: ParamSet,
    pub adam: AdamState,
}

impl Critic {
    pub fn new(spec: CriticSpec, params: ParamSet) -> Result<Self> {
        crate::models::check_layout(&spec, &params, "critic")?;
        let adam = AdamState::new(&params, AdamHyper::default());
        Ok(Critic { spec, params, adam })
    }

    /// Fresh critic, initialized and then clipped into `[-clip, clip]`.
    pub fn init(spec: CriticSpec, seed: u64, clip: f64) -> Result<Self> {
        let mut params = init_params(&spec, seed);
        clip_params(&mut params, clip)?;
        Critic::new(spec, params)
    }
}

/// Appends `O_G = reduce_i [G(h_i^X) - G(h_i^Y)]` over `[n, K]` nodes.
pub fn objective_node(
    g: &mut Graph,
    spec: &CriticSpec,
    nodes: &ParamNodes,
    hx: NodeId,
    hy: NodeId,
    reduction: Reduction,
) -> NodeId {
    let sx = critic_scores(g, spec, nodes, hx);
    let sy = critic_scores(g, spec, nodes, hy);
    let gap = g.sub(sx, sy);
    g.reduce(gap, reduction)
}

/// Graph of `O_G` on fixed features, with the critic weights trainable and
/// the objective set as the loss. Not yet evaluated.
pub fn critic_objective(
    params: &ParamSet,
    spec: &CriticSpec,
    batch: &CriticBatch,
    reduction: Reduction,
) -> Result<Graph> {
    if batch.k() != spec.feature_dim {
        return Err(Error::Shape(format!(
            "critic expects K={}, batch has K={}",
            spec.feature_dim,
            batch.k()
        )));
    }
    let mut g = Graph::new();
    let nodes = attach(&mut g, params, true);
    let hx = g.constant(batch.hx_tensor());
    let hy = g.constant(batch.hy_tensor());
    let obj = objective_node(&mut g, spec, &nodes, hx, hy, reduction);
    g.set_loss(obj);
    Ok(g)
}

pub fn critic_objective_value(
    params: &ParamSet,
    spec: &CriticSpec,
    batch: &CriticBatch,
    reduction: Reduction,
) -> Result<f64> {
    let mut g = critic_objective(params, spec, batch, reduction)?;
    Ok(g.evaluate(&Bindings::new())?["loss"].item())
}

/// One ascent step on `O_G` followed by clipping. Returns the objective
/// before the step.
pub fn critic_step(critic: &mut Critic, batch: &CriticBatch, cfg: &RegularizerConfig) -> Result<f64> {
    let mut g = critic_objective(&critic.params, &critic.spec, batch, cfg.reduction)?;
    let value = g.evaluate(&Bindings::new())?["loss"].item();
    let grads = g.gradients()?;
    adam_step(
        &mut critic.params,
        &grads,
        &mut critic.adam,
        cfg.lr,
        Direction::Maximize,
    )?;
    clip_params(&mut critic.params, cfg.clip)?;
    Ok(value)
}

/// Exactly `cfg.k` rounds of: sample `n1` pairs, project them with the
/// frozen `F`, ascend `O_G`, clip. `observe` sees the critic after each step.
#[allow(clippy::too_many_arguments)]
pub fn regularizer_branch(
    critic: &mut Critic,
    f_params: &ParamSet,
    f_spec: &ProjectorSpec,
    data: &PreparedPairs,
    cfg: &RegularizerConfig,
    sampler: &mut BatchSampler,
    observe: &mut dyn FnMut(&ParamSet),
) -> Result<()> {
    for _ in 0..cfg.k {
        let idx = sampler.next_batch(cfg.n1)?;
        let batch = project_batch(f_params, f_spec, data, &idx)?;
        critic_step(critic, &batch, cfg)?;
        observe(&critic.params);
    }
    Ok(())
}

/// Trains a scratch copy of `start` on `train` for `steps` clipped ascent
/// steps and returns the mean objective on `eval`.
pub fn estimate_wd_features(
    start: &Critic,
    train: &FeatureMatrix,
    eval: &FeatureMatrix,
    steps: usize,
    cfg: &RegularizerConfig,
    rng: ChaCha8Rng,
) -> Result<f64> {
    let mut critic = start.clone();
    let mut sampler = BatchSampler::new(train.len(), rng)?;
    for _ in 0..steps {
        let batch = train.select(&sampler.next_batch(cfg.n1)?)?;
        critic_step(&mut critic, &batch, cfg)?;
    }
    critic_objective_value(&critic.params, &critic.spec, eval, Reduction::Mean)
}

/// Wasserstein estimate of the projected X and Y distributions under `F`.
///
/// `n_eval` pairs are held out for the final objective; the critic is fit
/// on the rest (or on the same pairs when nothing is left over).
#[allow(clippy::too_many_arguments)]
pub fn estimate_wd(
    start: &Critic,
    f_params: &ParamSet,
    f_spec: &ProjectorSpec,
    data: &PreparedPairs,
    n_eval: usize,
    converge_steps: usize,
    cfg: &RegularizerConfig,
    mut rng: ChaCha8Rng,
) -> Result<f64> {
    if n_eval == 0 {
        return Err(Error::config("n_eval", "must be >= 1"));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let features = project_batch(f_params, f_spec, data, &order)?;
    let held = n_eval.min(order.len());
    let eval_idx: Vec<usize> = (0..held).collect();
    let train_idx: Vec<usize> = if held < order.len() {
        (held..order.len()).collect()
    } else {
        eval_idx.clone()
    };
    let eval = features.select(&eval_idx)?;
    let train = features.select(&train_idx)?;
    estimate_wd_features(start, &train, &eval, converge_steps, cfg, rng)
}
