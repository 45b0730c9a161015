//! Quick built-in checks: gradients, clipping, critic-objective laws,
//! optimizer arithmetic and metric oracles.

use std::fmt;

use crate::eval::{mean_average_precision, mean_reciprocal_rank, w1_empirical_1d, RankedQuery};
use crate::models::{CriticSpec, FeatureMatrix};
use crate::numcore::fixtures::random_graph;
use crate::numcore::{
    adam_step, check_gradients, clip_params, AdamHyper, AdamState, Direction, GradientFault, ParamSet, Reduction,
    Tensor,
};
use crate::wdreg::{critic_objective_value, critic_step, Critic, RegularizerConfig};

pub const GRADCHECK_GRAPHS: u64 = 100;
pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Clone, Copy, Debug, Default)]
pub struct SelftestOptions {
    /// Break the tanh backward rule, to prove the gradient suite notices.
    pub inject_gradient_fault: bool,
}

#[derive(Clone, Debug)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for SuiteResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {}: {}", self.name, self.detail)
    }
}

fn suite(name: &'static str, body: impl FnOnce() -> Result<String, String>) -> SuiteResult {
    match body() {
        Ok(detail) => SuiteResult {
            name,
            passed: true,
            detail,
        },
        Err(detail) => SuiteResult {
            name,
            passed: false,
            detail,
        },
    }
}

fn gradients(opts: SelftestOptions) -> Result<String, String> {
    let mut worst = 0.0f64;
    for seed in 0..GRADCHECK_GRAPHS {
        let mut g = random_graph(seed);
        if opts.inject_gradient_fault {
            g.inject_fault(GradientFault::SkewTanh);
        }
        let err = check_gradients(&mut g, GRADCHECK_STEP).map_err(|e| format!("graph {seed}: {e}"))?;
        worst = worst.max(err);
        if err.is_nan() || err >= GRADCHECK_TOL {
            return Err(format!("graph {seed}: relative error {err:.3e} >= {GRADCHECK_TOL:e}"));
        }
    }
    Ok(format!("{GRADCHECK_GRAPHS} graphs, max relative error {worst:.3e}"))
}

fn clipping() -> Result<String, String> {
    let c = 0.1;
    let cfg = RegularizerConfig {
        k: 1,
        n1: 8,
        lr: 0.05,
        clip: c,
        reduction: Reduction::Mean,
    };
    let mut critic = Critic::init(CriticSpec::new(4), 7, c).map_err(|e| e.to_string())?;
    let hx: Vec<f64> = (0..32).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
    let hy: Vec<f64> = (0..32).map(|i| (i as f64 * 0.11).cos()).collect();
    let batch = FeatureMatrix::new(4, hx, hy).map_err(|e| e.to_string())?;
    for step in 0..50 {
        critic_step(&mut critic, &batch, &cfg).map_err(|e| e.to_string())?;
        if critic.params.max_abs() > c {
            return Err(format!("step {step}: |θ_G| = {} > {c}", critic.params.max_abs()));
        }
    }
    let mut p: ParamSet = [("w".to_string(), Tensor::vector(vec![0.7, -0.2, -0.9]).unwrap())]
        .into_iter()
        .collect();
    clip_params(&mut p, 0.5).map_err(|e| e.to_string())?;
    if p.get("w").unwrap().data() != [0.5, -0.2, -0.5] {
        return Err("clamp of (0.7, -0.2, -0.9) at 0.5".into());
    }
    Ok("50 critic steps within [-c, c]; clamp example".into())
}

fn objective_laws() -> Result<String, String> {
    let spec = CriticSpec::new(3);
    let critic = Critic::init(spec.clone(), 3, 0.5).map_err(|e| e.to_string())?;
    let hx: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
    let hy: Vec<f64> = (0..30).map(|i| (i as f64 * 1.7).cos() + 0.5).collect();
    let batch = FeatureMatrix::new(3, hx.clone(), hy).map_err(|e| e.to_string())?;
    let same = FeatureMatrix::new(3, hx.clone(), hx).map_err(|e| e.to_string())?;
    for red in [Reduction::Sum, Reduction::Mean] {
        let eval = |b: &FeatureMatrix| critic_objective_value(&critic.params, &spec, b, red).map_err(|e| e.to_string());
        let a = eval(&batch)?;
        let b = eval(&batch.swapped())?;
        if a.to_bits() != (-b).to_bits() {
            return Err(format!("{red:?}: swap gives {b}, expected exactly {}", -a));
        }
        let z = eval(&same)?;
        if z != 0.0 {
            return Err(format!("{red:?}: equal pairs give {z}"));
        }
    }
    Ok("antisymmetry and zero law, sum and mean".into())
}

fn optimizer() -> Result<String, String> {
    let mut p: ParamSet = [("x".to_string(), Tensor::scalar(0.0).unwrap())].into_iter().collect();
    let grads = [("x".to_string(), Tensor::scalar(1.0).unwrap())].into_iter().collect();
    let mut st = AdamState::new(&p, AdamHyper::default());
    adam_step(&mut p, &grads, &mut st, 0.001, Direction::Minimize).map_err(|e| e.to_string())?;
    let v = p.get("x").unwrap().item();
    // m̂ = 1, v̂ = 1: the step is lr / (1 + eps).
    let expect = -0.001 / (1.0 + 1e-8);
    if (v - expect).abs() > 1e-15 {
        return Err(format!("first Adam step {v}, expected {expect}"));
    }
    Ok("bias-corrected first step".into())
}

fn metrics() -> Result<String, String> {
    let q = |c: &[(f64, bool)]| RankedQuery {
        query_id: "q".into(),
        candidates: c.to_vec(),
    };
    let first = q(&[(0.9, true), (0.5, false), (0.1, false)]);
    let second = q(&[(0.9, false), (0.8, true)]);
    let checks = [
        ("MAP first", mean_average_precision(std::slice::from_ref(&first)), 1.0),
        ("MAP second", mean_average_precision(std::slice::from_ref(&second)), 0.5),
        (
            "MAP mean",
            mean_average_precision(&[first.clone(), second.clone()]),
            0.75,
        ),
        ("MRR second", mean_reciprocal_rank(std::slice::from_ref(&second)), 0.5),
        ("W1 point masses", w1_empirical_1d(&[0.0], &[3.0]), 3.0),
        ("W1 sorted matching", w1_empirical_1d(&[0.0, 2.0], &[1.0, 3.0]), 1.0),
    ];
    for (name, got, want) in checks {
        let got = got.map_err(|e| format!("{name}: {e}"))?;
        if got != want {
            return Err(format!("{name}: {got} != {want}"));
        }
    }
    Ok("MAP, MRR and W1 reference values".into())
}

pub fn run_selftest(opts: SelftestOptions) -> Vec<SuiteResult> {
    vec![
        suite("gradients", || gradients(opts)),
        suite("clipping", clipping),
        suite("objective-laws", objective_laws),
        suite("optimizer", optimizer),
        suite("metrics", metrics),
    ]
}
