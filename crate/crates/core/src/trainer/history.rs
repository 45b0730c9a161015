use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HISTORY_HEADER: &str = "epoch,train_loss,train_match_loss,dev_metric,wd_estimate";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean regularized loss over the epoch's matching steps.
    pub train_loss: f64,
    /// Mean matching loss over the same steps.
    pub train_match_loss: f64,
    pub dev_metric: f64,
    pub wd_estimate: Option<f64>,
}

/// Per-epoch training curve. Epochs are numbered from 1 without gaps.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    records: Vec<EpochRecord>,
}

impl RunHistory {
    pub fn new() -> Self {
        RunHistory::default()
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn push(&mut self, rec: EpochRecord) -> Result<()> {
        if rec.epoch != self.records.len() + 1 {
            return Err(Error::Data(format!(
                "history expects epoch {}, got {}",
                self.records.len() + 1,
                rec.epoch
            )));
        }
        self.records.push(rec);
        Ok(())
    }

    /// CSV text; an absent estimate is an empty field.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{HISTORY_HEADER}\n");
        for r in &self.records {
            let wd = r.wd_estimate.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch, r.train_loss, r.train_match_loss, r.dev_metric, wd
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(HISTORY_HEADER) {
            return Err(Error::Data(format!("history must start with `{HISTORY_HEADER}`")));
        }
        let mut hist = RunHistory::new();
        for (i, line) in lines.enumerate() {
            let bad = |msg: &str| Error::Data(format!("history line {}: {msg}", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad("expected 5 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
            hist.push(EpochRecord {
                epoch: f[0].parse().map_err(|_| bad("bad epoch"))?,
                train_loss: num(f[1])?,
                train_match_loss: num(f[2])?,
                dev_metric: num(f[3])?,
                wd_estimate: if f[4].is_empty() { None } else { Some(num(f[4])?) },
            })?;
        }
        Ok(hist)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        RunHistory::from_csv(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}
