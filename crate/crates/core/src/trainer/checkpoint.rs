use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::run::TrainState;
use super::TrainingConfig;
use crate::data::SamplerState;
use crate::error::{Error, Result};
use crate::models::check_layout;
use crate::numcore::ParamSet;

pub const CHECKPOINT_MAGIC: &str = "wdmatch-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A resumable training state. On disk: a magic/version line, a sha256 line
/// over the payload, then the JSON payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: TrainingConfig,
    pub state: TrainState,
    pub critic_sampler: SamplerState,
    pub match_sampler: SamplerState,
}

impl Checkpoint {
    /// Best-dev `F` and `M`, or the latest ones before any epoch finished.
    pub fn best_params(&self) -> (&ParamSet, &ParamSet) {
        match &self.state.best {
            Some(b) => (&b.f, &b.m),
            None => (&self.state.f, &self.state.m),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.config.projector.feature_dim
    }

    /// Checks every tensor against the shapes the stored config implies.
    pub fn validate(&self) -> Result<()> {
        let cfg = &self.config;
        let s = &self.state;
        check_layout(&cfg.projector, &s.f, "checkpoint F")?;
        check_layout(&cfg.matcher_spec(), &s.m, "checkpoint M")?;
        check_layout(&cfg.critic_spec(), &s.critic.params, "checkpoint G")?;
        if let Some(b) = &s.best {
            check_layout(&cfg.projector, &b.f, "checkpoint best F")?;
            check_layout(&cfg.matcher_spec(), &b.m, "checkpoint best M")?;
        }
        for (adam, p, what) in [
            (&s.f_adam, &s.f, "F"),
            (&s.m_adam, &s.m, "M"),
            (&s.critic.adam, &s.critic.params, "G"),
        ] {
            adam.check_matches(p)
                .map_err(|e| Error::Shape(format!("checkpoint {what} optimizer state: {e}")))?;
        }
        Ok(())
    }

    /// Rejects a checkpoint whose feature space differs from `expected`.
    pub fn expect_feature_dim(&self, expected: usize) -> Result<()> {
        if self.feature_dim() != expected {
            return Err(Error::Shape(format!(
                "checkpoint has K={}, expected K={expected}",
                self.feature_dim()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let payload = serde_json::to_string(self).map_err(|e| Error::Checkpoint(format!("serialize: {e}")))?;
        let digest = hex::encode(Sha256::digest(payload.as_bytes()));
        Ok(format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\nsha256 {digest}\n{payload}\n").into_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|_| Error::Checkpoint("not UTF-8".into()))?;
        let mut parts = text.splitn(3, '\n');
        let header = parts.next().unwrap_or_default();
        let version = header
            .strip_prefix(CHECKPOINT_MAGIC)
            .map(str::trim)
            .ok_or_else(|| Error::Checkpoint("missing checkpoint header".into()))?;
        if version != CHECKPOINT_VERSION.to_string() {
            return Err(Error::Version {
                found: version.to_string(),
                expected: CHECKPOINT_VERSION,
            });
        }
        let expected = parts
            .next()
            .and_then(|l| l.strip_prefix("sha256 "))
            .ok_or_else(|| Error::Checkpoint("missing checksum line".into()))?;
        let payload = parts
            .next()
            .ok_or_else(|| Error::Checkpoint("missing payload".into()))?
            .trim_end_matches('\n');
        let found = hex::encode(Sha256::digest(payload.as_bytes()));
        if found != expected {
            return Err(Error::Checksum {
                expected: expected.to_string(),
                found,
            });
        }
        let ckpt: Checkpoint = serde_json::from_str(payload).map_err(|e| Error::Checkpoint(format!("payload: {e}")))?;
        ckpt.validate()?;
        Ok(ckpt)
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
