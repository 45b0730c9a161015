use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::history::{EpochRecord, RunHistory};
use super::loss::{dev_metric, regularized_loss, scalar, take_grads, LabeledPairs};
use super::TrainingConfig;
use crate::data::BatchSampler;
use crate::error::{Error, Result};
use crate::models::{check_layout, init_params, ProjectorSpec};
use crate::numcore::{adam_step, AdamHyper, AdamState, Bindings, Direction, NumError, ParamSet};
use crate::rng::{child, child_indexed, Stream};
use crate::wdreg::{estimate_wd, regularizer_branch, Critic};

/// Best-dev parameters seen so far.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub epoch: usize,
    pub dev_metric: f64,
    pub f: ParamSet,
    pub m: ParamSet,
}

/// Everything the loop mutates, apart from the two samplers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub f: ParamSet,
    pub m: ParamSet,
    pub f_adam: AdamState,
    pub m_adam: AdamState,
    pub critic: Critic,
    pub history: RunHistory,
    pub best: Option<Snapshot>,
    /// Epochs since the best dev metric.
    pub since_best: usize,
    pub stopped: bool,
}

/// Update counts, for checking the per-round resource contract.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counters {
    pub rounds: u64,
    pub critic_updates: u64,
    pub match_updates: u64,
}

/// `L_reg` and `L_m` of one matching step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLoss {
    pub regularized: f64,
    pub matching: f64,
}

/// Final parameters (best dev epoch) and the full curve.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub f: ParamSet,
    pub m: ParamSet,
    pub history: RunHistory,
}

fn numeric(e: NumError, what: &str) -> Error {
    match e {
        NumError::Overflow { .. } | NumError::NonFiniteValue { .. } => Error::NonFinite(format!("{what}: {e}")),
        other => Error::Num(other),
    }
}

/// Wasserstein estimate of `F`'s projected domains on `data`, with a fresh
/// scratch critic keyed by `tag` so that runs sharing a seed share critics.
pub fn wd_estimate(cfg: &TrainingConfig, f: &ParamSet, data: &LabeledPairs, tag: u64) -> Result<f64> {
    wd_estimate_pairs(cfg, &cfg.projector, f, &data.pairs, tag)
}

pub fn wd_estimate_pairs(
    cfg: &TrainingConfig,
    spec: &ProjectorSpec,
    f: &ParamSet,
    pairs: &crate::models::PreparedPairs,
    tag: u64,
) -> Result<f64> {
    let mut rng = child_indexed(cfg.seed, Stream::Diagnostic, tag);
    let critic = Critic::init(cfg.critic_spec(), rng.next_u64(), cfg.clip)?;
    estimate_wd(
        &critic,
        f,
        spec,
        pairs,
        cfg.n_eval,
        cfg.converge_steps,
        &cfg.regularizer_config(),
        rng,
    )
}

type CriticObserver<'a> = Box<dyn FnMut(&ParamSet) + 'a>;

/// The alternating loop: per round, `k` critic steps then one matching step.
pub struct Trainer<'a> {
    cfg: TrainingConfig,
    train: &'a LabeledPairs,
    dev: &'a LabeledPairs,
    state: TrainState,
    critic_sampler: BatchSampler,
    match_sampler: BatchSampler,
    counters: Counters,
    observer: Option<CriticObserver<'a>>,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: TrainingConfig, train: &'a LabeledPairs, dev: &'a LabeledPairs) -> Result<Self> {
        cfg.validate()?;
        train.check_labels(cfg.task)?;
        dev.check_labels(cfg.task)?;
        let mut init = child(cfg.seed, Stream::Init);
        let f = init_params(&cfg.projector, init.next_u64());
        let m = init_params(&cfg.matcher_spec(), init.next_u64());
        let critic = Critic::init(cfg.critic_spec(), init.next_u64(), cfg.clip)?;
        let state = TrainState {
            epoch: 0,
            f_adam: AdamState::new(&f, AdamHyper::default()),
            m_adam: AdamState::new(&m, AdamHyper::default()),
            f,
            m,
            critic,
            history: RunHistory::new(),
            best: None,
            since_best: 0,
            stopped: false,
        };
        Ok(Trainer {
            critic_sampler: BatchSampler::new(train.len(), child(cfg.seed, Stream::Critic))?,
            match_sampler: BatchSampler::new(train.len(), child(cfg.seed, Stream::Matching))?,
            cfg,
            train,
            dev,
            state,
            counters: Counters::default(),
            observer: None,
        })
    }

    /// Continues a checkpointed run exactly where it stopped.
    pub fn resume(ckpt: Checkpoint, train: &'a LabeledPairs, dev: &'a LabeledPairs) -> Result<Self> {
        let cfg = ckpt.config;
        cfg.validate()?;
        check_layout(&cfg.projector, &ckpt.state.f, "checkpoint F")?;
        let critic_sampler = BatchSampler::from_state(&ckpt.critic_sampler)?;
        let match_sampler = BatchSampler::from_state(&ckpt.match_sampler)?;
        if critic_sampler.len() != train.len() || match_sampler.len() != train.len() {
            return Err(Error::Data(format!(
                "checkpoint was trained on {} pairs, training set has {}",
                match_sampler.len(),
                train.len()
            )));
        }
        train.check_labels(cfg.task)?;
        dev.check_labels(cfg.task)?;
        Ok(Trainer {
            cfg,
            train,
            dev,
            state: ckpt.state,
            critic_sampler,
            match_sampler,
            counters: Counters::default(),
            observer: None,
        })
    }

    /// Called with the critic after every critic update.
    pub fn set_critic_observer(&mut self, f: impl FnMut(&ParamSet) + 'a) {
        self.observer = Some(Box::new(f));
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.cfg
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn history(&self) -> &RunHistory {
        &self.state.history
    }

    pub fn is_finished(&self) -> bool {
        self.state.stopped || self.state.epoch >= self.cfg.epochs
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            state: self.state.clone(),
            critic_sampler: self.critic_sampler.state(),
            match_sampler: self.match_sampler.state(),
        }
    }

    /// `k` clipped critic ascent steps against the current `F`. A no-op when
    /// the regularizer is disabled.
    pub fn regularizer_phase(&mut self) -> Result<()> {
        if !self.cfg.regularizer {
            return Ok(());
        }
        let rc = self.cfg.regularizer_config();
        let observer = &mut self.observer;
        let mut updates = 0u64;
        regularizer_branch(
            &mut self.state.critic,
            &self.state.f,
            &self.cfg.projector,
            &self.train.pairs,
            &rc,
            &mut self.critic_sampler,
            &mut |g| {
                updates += 1;
                if let Some(obs) = observer.as_mut() {
                    obs(g);
                }
            },
        )
        .map_err(|e| match e {
            Error::Num(n) => numeric(n, "critic step"),
            other => other,
        })?;
        self.counters.critic_updates += updates;
        Ok(())
    }

    /// One descent step on `L_reg` for `F` and `M` with the critic fixed.
    pub fn matching_phase(&mut self) -> Result<StepLoss> {
        let idx = self.match_sampler.next_batch(self.cfg.n2)?;
        let lambda = if self.cfg.regularizer { self.cfg.lambda } else { 0.0 };
        let s = &mut self.state;
        let mut g = regularized_loss(&s.f, &s.m, &s.critic.params, &self.cfg, self.train, &idx, lambda)?;
        let where_ = format!("epoch {} matching step", s.epoch + 1);
        let out = g.evaluate(&Bindings::new()).map_err(|e| numeric(e, &where_))?;
        let mut grads = g.gradients().map_err(|e| numeric(e, &where_))?;
        let gf = take_grads(&mut grads, "f.");
        let gm = take_grads(&mut grads, "m.");
        adam_step(&mut s.f, &gf, &mut s.f_adam, self.cfg.lr_match, Direction::Minimize)
            .map_err(|e| numeric(e, &where_))?;
        adam_step(&mut s.m, &gm, &mut s.m_adam, self.cfg.lr_match, Direction::Minimize)
            .map_err(|e| numeric(e, &where_))?;
        self.counters.match_updates += 1;
        Ok(StepLoss {
            regularized: scalar(&out, "loss"),
            matching: scalar(&out, "match_loss"),
        })
    }

    pub fn run_round(&mut self) -> Result<StepLoss> {
        self.regularizer_phase()?;
        let loss = self.matching_phase()?;
        self.counters.rounds += 1;
        Ok(loss)
    }

    fn estimate_due(&self, epoch: usize) -> bool {
        self.cfg.wd_every > 0 && (epoch.is_multiple_of(self.cfg.wd_every) || epoch == self.cfg.epochs)
    }

    /// `⌈|train| / n2⌉` rounds, then dev evaluation, the optional
    /// Wasserstein estimate, and early-stopping bookkeeping.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let rounds = self.train.len().div_ceil(self.cfg.n2);
        let (mut reg, mut mat) = (0.0, 0.0);
        for _ in 0..rounds {
            let l = self.run_round()?;
            reg += l.regularized;
            mat += l.matching;
        }
        let epoch = self.state.epoch + 1;
        let dev = dev_metric(&self.state.f, &self.state.m, &self.cfg, self.dev)?;
        let wd = if self.estimate_due(epoch) {
            Some(wd_estimate(&self.cfg, &self.state.f, self.train, epoch as u64)?)
        } else {
            None
        };
        let rec = EpochRecord {
            epoch,
            train_loss: reg / rounds as f64,
            train_match_loss: mat / rounds as f64,
            dev_metric: dev,
            wd_estimate: wd,
        };
        let wd_text = wd.map_or_else(|| "-".to_string(), |w| format!("{w:.5}"));
        log::info!(
            "epoch {epoch}: loss={:.5} match={:.5} dev={dev:.4} wd={wd_text}",
            rec.train_loss,
            rec.train_match_loss
        );
        let s = &mut self.state;
        s.history.push(rec.clone())?;
        s.epoch = epoch;
        if s.best.as_ref().is_none_or(|b| dev > b.dev_metric) {
            s.best = Some(Snapshot {
                epoch,
                dev_metric: dev,
                f: s.f.clone(),
                m: s.m.clone(),
            });
            s.since_best = 0;
        } else {
            s.since_best += 1;
            if self.cfg.patience > 0 && s.since_best >= self.cfg.patience {
                log::info!("early stop after epoch {epoch}");
                s.stopped = true;
            }
        }
        Ok(rec)
    }

    /// Runs to completion, calling `after_epoch` after each epoch.
    pub fn run_with(&mut self, mut after_epoch: impl FnMut(&Trainer<'a>) -> Result<()>) -> Result<()> {
        while !self.is_finished() {
            self.run_epoch()?;
            after_epoch(self)?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_with(|_| Ok(()))
    }

    pub fn outcome(&self) -> TrainOutcome {
        let (f, m) = match &self.state.best {
            Some(b) => (b.f.clone(), b.m.clone()),
            None => (self.state.f.clone(), self.state.m.clone()),
        };
        TrainOutcome {
            f,
            m,
            history: self.state.history.clone(),
        }
    }
}

/// Trains from scratch and returns the best-dev parameters and the history.
pub fn train(cfg: &TrainingConfig, train: &LabeledPairs, dev: &LabeledPairs) -> Result<TrainOutcome> {
    let mut t = Trainer::new(cfg.clone(), train, dev)?;
    t.run()?;
    Ok(t.outcome())
}
