use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use wdmatch::data::Schema;
use wdmatch::trainer::TrainingConfig;
use wdmatch::{Error, Result};

/// A training run description: data locations plus the training config.
/// Relative paths are resolved against the config file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub train: PathBuf,
    pub dev: PathBuf,
    #[serde(default)]
    pub test: Option<PathBuf>,
    /// GloVe-format vectors; every token is out-of-vocabulary without it.
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    pub schema: Schema,
    #[serde(default)]
    pub training: TrainingConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| config_error(&e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            let joined = if p.is_relative() { base.join(&*p) } else { p.clone() };
            *p = std::path::absolute(&joined).unwrap_or(joined);
        };
        fix(&mut self.train);
        fix(&mut self.dev);
        self.test.iter_mut().for_each(fix);
        self.embeddings.iter_mut().for_each(fix);
    }

    pub fn inputs(&self) -> Vec<(&'static str, &Path)> {
        let mut v = vec![("train", self.train.as_path()), ("dev", self.dev.as_path())];
        if let Some(t) = &self.test {
            v.push(("test", t));
        }
        if let Some(e) = &self.embeddings {
            v.push(("embeddings", e));
        }
        v
    }
}

/// Maps a JSON error onto a config error naming the offending field where
/// serde reports one.
pub fn config_error(e: &serde_json::Error) -> Error {
    let msg = e.to_string();
    let field = msg
        .split('`')
        .nth(1)
        .filter(|_| msg.contains("field"))
        .unwrap_or("config")
        .to_string();
    Error::config(&field, msg)
}

/// Flag overrides; each one that is set replaces the file value.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub lambda: Option<f64>,
    pub clip: Option<f64>,
    pub k: Option<usize>,
    pub n1: Option<usize>,
    pub n2: Option<usize>,
    pub lr_critic: Option<f64>,
    pub lr_match: Option<f64>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub no_regularizer: bool,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut TrainingConfig) {
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { cfg.$f = v; })*};
        }
        set!(lambda, clip, k, n1, n2, lr_critic, lr_match, epochs, seed);
        if self.no_regularizer {
            cfg.regularizer = false;
        }
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub name: String,
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to repeat a run. Written before training starts and
/// rewritten with artifact checksums when it ends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub out_dir: PathBuf,
    pub started_unix: u64,
    #[serde(default)]
    pub finished_unix: Option<u64>,
    pub inputs: Vec<FileDigest>,
    #[serde(default)]
    pub artifacts: Vec<FileDigest>,
}

impl RunManifest {
    pub fn new(config: RunConfig, out_dir: PathBuf) -> Result<Self> {
        let inputs = config
            .inputs()
            .into_iter()
            .map(|(name, path)| {
                Ok(FileDigest {
                    name: name.to_string(),
                    path: path.to_path_buf(),
                    sha256: sha256_file(path)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(RunManifest {
            config,
            out_dir,
            started_unix: unix_now(),
            finished_unix: None,
            inputs,
            artifacts: Vec::new(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Data(e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Fails if an input file changed since the manifest was written.
    pub fn verify_inputs(&self) -> Result<()> {
        for d in &self.inputs {
            let now = sha256_file(&d.path)?;
            if now != d.sha256 {
                return Err(Error::Data(format!(
                    "input `{}` ({}) changed since the manifest was written",
                    d.name,
                    d.path.display()
                )));
            }
        }
        Ok(())
    }
}
