use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngState;

/// Mini-batch sampler: shuffled passes over `0..len` without replacement,
/// keeping the final short batch of each pass.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    rng: ChaCha8Rng,
    len: usize,
    order: Vec<usize>,
    cursor: usize,
    passes: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerState {
    rng: RngState,
    len: usize,
    order: Vec<usize>,
    cursor: usize,
    passes: u64,
}

impl BatchSampler {
    pub fn new(len: usize, rng: ChaCha8Rng) -> Result<Self> {
        if len == 0 {
            return Err(Error::Data("cannot sample from an empty dataset".into()));
        }
        Ok(BatchSampler {
            rng,
            len,
            order: Vec::new(),
            cursor: 0,
            passes: 0,
        })
    }

    /// Next batch of at most `n` indices.
    pub fn next_batch(&mut self, n: usize) -> Result<Vec<usize>> {
        if n == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if self.cursor >= self.order.len() {
            self.order = (0..self.len).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
            self.passes += 1;
        }
        let end = (self.cursor + n).min(self.order.len());
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        Ok(batch)
    }

    /// Completed or started passes over the data.
    pub fn passes(&self) -> u64 {
        self.passes
    }

    pub fn state(&self) -> SamplerState {
        SamplerState {
            rng: RngState::capture(&self.rng),
            len: self.len,
            order: self.order.clone(),
            cursor: self.cursor,
            passes: self.passes,
        }
    }

    pub fn from_state(state: &SamplerState) -> Result<Self> {
        if state.len == 0 || state.cursor > state.order.len() {
            return Err(Error::Checkpoint("inconsistent sampler state".into()));
        }
        Ok(BatchSampler {
            rng: state.rng.restore()?,
            len: state.len,
            order: state.order.clone(),
            cursor: state.cursor,
            passes: state.passes,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// One batch of `n` indices drawn from a fresh pass.
pub fn sample_minibatch(len: usize, n: usize, rng: ChaCha8Rng) -> Result<Vec<usize>> {
    BatchSampler::new(len, rng)?.next_batch(n)
}
