use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{CriticActivation, CriticSpec, MatcherSpec, ProjectorSpec, Task};
use crate::numcore::Reduction;
use crate::wdreg::RegularizerConfig;

/// Every input of the alternating training loop plus architecture and run
/// settings. Missing JSON fields take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Critic mini-batch size.
    pub n1: usize,
    /// Matching mini-batch size.
    pub n2: usize,
    /// Critic updates per round.
    pub k: usize,
    pub lambda: f64,
    pub lr_critic: f64,
    pub lr_match: f64,
    pub clip: f64,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub reduction: Reduction,
    /// `false` trains the plain matcher: no critic, no Wasserstein term.
    pub regularizer: bool,
    /// Ascent steps of the scratch critic behind each Wasserstein estimate.
    pub converge_steps: usize,
    /// Held-out pairs for each Wasserstein estimate.
    pub n_eval: usize,
    /// Estimate the distance every this many epochs (and always at the
    /// last one); 0 disables per-epoch estimates.
    pub wd_every: usize,
    pub projector: ProjectorSpec,
    pub critic_hidden: usize,
    pub critic_activation: CriticActivation,
    pub task: Task,
    pub matcher_hidden: Vec<usize>,
    pub enrich: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            n1: 256,
            n2: 256,
            k: 5,
            lambda: 0.01,
            lr_critic: 0.001,
            lr_match: 0.001,
            clip: 0.1,
            epochs: 20,
            patience: 5,
            seed: 0,
            reduction: Reduction::Mean,
            regularizer: true,
            converge_steps: 500,
            n_eval: 1000,
            wd_every: 1,
            projector: ProjectorSpec::default(),
            critic_hidden: 128,
            critic_activation: CriticActivation::Relu,
            task: Task::Classification { classes: 3 },
            matcher_hidden: vec![64],
            enrich: true,
        }
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be > 0, got {v}")))
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config(
                "lambda",
                format!("must lie in [0, 1], got {}", self.lambda),
            ));
        }
        positive("lr_critic", self.lr_critic)?;
        positive("lr_match", self.lr_match)?;
        positive("clip", self.clip)?;
        for (field, v) in [
            ("n1", self.n1),
            ("n2", self.n2),
            ("epochs", self.epochs),
            ("n_eval", self.n_eval),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be >= 1"));
            }
        }
        self.projector.validate()?;
        self.critic_spec().validate()?;
        self.matcher_spec().validate()
    }

    pub fn critic_spec(&self) -> CriticSpec {
        CriticSpec {
            feature_dim: self.projector.feature_dim,
            hidden: self.critic_hidden,
            activation: self.critic_activation,
        }
    }

    pub fn matcher_spec(&self) -> MatcherSpec {
        MatcherSpec {
            feature_dim: self.projector.feature_dim,
            task: self.task,
            hidden_dims: self.matcher_hidden.clone(),
            enrich: self.enrich,
        }
    }

    pub fn regularizer_config(&self) -> RegularizerConfig {
        RegularizerConfig {
            k: self.k,
            n1: self.n1,
            lr: self.lr_critic,
            clip: self.clip,
            reduction: self.reduction,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_partial_json_fills_in() {
        TrainingConfig::default().validate().unwrap();
        let c: TrainingConfig = serde_json::from_str(r#"{"lambda": 0.005, "projector": {"feature_dim": 8}}"#).unwrap();
        assert_eq!(c.lambda, 0.005);
        assert_eq!(c.projector.feature_dim, 8);
        assert_eq!(c.k, 5);
        assert!(serde_json::from_str::<TrainingConfig>(r#"{"lamda": 0.01}"#).is_err());
    }

    #[test]
    fn out_of_range_fields_are_named() {
        let bad = TrainingConfig {
            lambda: 2.0,
            ..Default::default()
        };
        match bad.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "lambda"),
            other => panic!("{other:?}"),
        }
        let bad = TrainingConfig {
            clip: 0.0,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { field, .. }) if field == "clip"));
    }
}
