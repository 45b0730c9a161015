use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{NumError, ParamSet, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Minimize,
    Maximize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators for one [`ParamSet`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub hyper: AdamHyper,
    pub step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamSet, hyper: AdamHyper) -> Self {
        let zeros: BTreeMap<String, Tensor> = params
            .iter()
            .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape())))
            .collect();
        AdamState {
            hyper,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor> {
        self.first.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor> {
        self.second.get(name)
    }

    /// Verifies the accumulators mirror `params` exactly.
    pub fn check_matches(&self, params: &ParamSet) -> Result<(), NumError> {
        params.check_aligned(&self.first)?;
        params.check_aligned(&self.second)
    }
}

/// One bias-corrected Adam update. `Maximize` ascends by flipping the sign of
/// the step and nothing else.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    lr: f64,
    direction: Direction,
) -> Result<(), NumError> {
    if !(lr.is_finite() && lr > 0.0) {
        return Err(NumError::Config(format!("learning rate must be > 0, got {lr}")));
    }
    params.check_aligned(grads)?;
    state.check_matches(params)?;

    state.step += 1;
    let AdamHyper { beta1, beta2, eps } = state.hyper;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let sign = match direction {
        Direction::Minimize => -1.0,
        Direction::Maximize => 1.0,
    };

    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let g = grads[&name].data();
        let m = state.first.get_mut(&name).expect("aligned").data_mut();
        let v = state.second.get_mut(&name).expect("aligned").data_mut();
        let p = params.get_mut(&name).expect("aligned").data_mut();
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] += sign * lr * m_hat / (v_hat.sqrt() + eps);
        }
        if let Some(bad) = p.iter().find(|x| !x.is_finite()) {
            return Err(NumError::Overflow {
                node: format!("adam update of `{name}`"),
                value: *bad,
            });
        }
    }
    Ok(())
}
