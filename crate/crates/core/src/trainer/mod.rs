//! The matching branch and the outer alternating loop, with early stopping,
//! run histories and checkpoints.

mod checkpoint;
mod config;
mod history;
mod loss;
mod run;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::TrainingConfig;
pub use history::{EpochRecord, RunHistory, HISTORY_HEADER};
pub use loss::{argmax, dev_metric, matching_loss, predict_logits, regularized_loss, LabeledPairs};
pub use run::{train, wd_estimate, wd_estimate_pairs, Counters, Snapshot, StepLoss, TrainOutcome, TrainState, Trainer};
