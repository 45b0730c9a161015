//! Acceptance checks, one PASS/FAIL line each. Exits non-zero if any fails.

mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use common::{oracle, small_config, synth};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use wdmatch::data::{generate_synthetic, Split, SynthSpec};
use wdmatch::eval::{accuracy, mean_average_precision, mean_reciprocal_rank, w1_empirical_1d, RankedQuery};
use wdmatch::models::{init_params, project_batch, CriticSpec, FeatureMatrix, ProjectorSpec, Task};
use wdmatch::numcore::fixtures::{random_graph, ALL_OP_KINDS};
use wdmatch::numcore::{check_gradients, Bindings, Graph, ParamSet, Reduction};
use wdmatch::trainer::{
    argmax, load_checkpoint, matching_loss, predict_logits, regularized_loss, save_checkpoint, train, wd_estimate,
    LabeledPairs, Trainer, TrainingConfig,
};
use wdmatch::wdreg::{critic_objective_value, estimate_wd_features, Critic};

const GRAD_GRAPHS: u64 = 100;
const GRAD_STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const GRAD_BUDGET: Duration = Duration::from_secs(10);

const CLIP_ROUNDS: usize = 200;

const LAW_BATCHES: u64 = 50;
const ADDITIVITY_TOL: f64 = 1e-12;

const SHIFTS: [f64; 7] = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0];
const SHIFT_SAMPLES: usize = 1000;
const SHIFT_HELD_OUT: usize = 250;
const MONOTONE_SLACK: f64 = 0.05;
const MIN_PEARSON: f64 = 0.99;
const ORACLE_BUDGET: Duration = Duration::from_secs(120);

const REPRO_SEEDS: u64 = 5;
const REPRO_MIN_WINS: usize = 4;
const ACCURACY_SLACK: f64 = 0.005;
const REPRO_BUDGET: Duration = Duration::from_secs(600);

const METRIC_SETS: u64 = 200;
const METRIC_TOL: f64 = 1e-12;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg)
    }
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut kinds = BTreeSet::new();
    for seed in 0..GRAD_GRAPHS {
        let mut g = random_graph(seed);
        kinds.extend(g.op_kinds());
        let err = check_gradients(&mut g, GRAD_STEP).map_err(|e| format!("graph {seed}: {e}"))?;
        check(err < GRAD_TOL, format!("graph {seed}: relative error {err:.3e}"))?;
        worst = worst.max(err);
    }
    let missing: Vec<_> = ALL_OP_KINDS.iter().filter(|k| !kinds.contains(*k)).collect();
    check(missing.is_empty(), format!("op kinds never generated: {missing:?}"))?;
    let took = start.elapsed();
    check(took < GRAD_BUDGET, format!("took {took:.2?}"))?;
    Ok(format!(
        "{GRAD_GRAPHS} graphs, {} op kinds, max rel err {worst:.2e} < {GRAD_TOL:e}, {took:.2?}",
        kinds.len()
    ))
}

fn clipping_invariant() -> Outcome {
    let t = synth(600, 21);
    let cfg = TrainingConfig {
        k: 5,
        epochs: 100,
        ..small_config(21)
    };
    let clip = cfg.clip;
    let mut steps = 0u64;
    let mut violations = 0u64;
    let mut worst = 0.0f64;
    {
        let mut tr = Trainer::new(cfg.clone(), &t.train, &t.dev).map_err(|e| e.to_string())?;
        tr.set_critic_observer(|g| {
            steps += 1;
            worst = worst.max(g.max_abs());
            if g.max_abs() > clip {
                violations += 1;
            }
        });
        for _ in 0..CLIP_ROUNDS {
            tr.run_round().map_err(|e| e.to_string())?;
        }
    }
    check(violations == 0, format!("{violations} of {steps} steps left the box"))?;
    let want = (CLIP_ROUNDS * cfg.k) as u64;
    check(steps == want, format!("{steps} critic steps, expected {want}"))?;
    Ok(format!(
        "{CLIP_ROUNDS} rounds, {steps} critic steps, max |θ_G| {worst} <= c={clip}"
    ))
}

fn algebraic_laws() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let spec = CriticSpec {
        hidden: 16,
        ..CriticSpec::new(6)
    };
    for trial in 0..LAW_BATCHES {
        let n = rng.random_range(1..40);
        let hx: Vec<f64> = (0..n * 6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let hy: Vec<f64> = (0..n * 6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let params = init_params(&spec, trial);
        let batch = FeatureMatrix::new(6, hx.clone(), hy).map_err(|e| e.to_string())?;
        let same = FeatureMatrix::new(6, hx.clone(), hx).map_err(|e| e.to_string())?;
        for red in [Reduction::Sum, Reduction::Mean] {
            let v = |b: &FeatureMatrix| critic_objective_value(&params, &spec, b, red).map_err(|e| e.to_string());
            let (a, b) = (v(&batch)?, v(&batch.swapped())?);
            check(
                a.to_bits() == (-b).to_bits(),
                format!("batch {trial} {red:?}: {a} vs swapped {b}"),
            )?;
            let z = v(&same)?;
            check(
                z.to_bits() == 0.0f64.to_bits(),
                format!("batch {trial} {red:?}: equal pairs give {z}"),
            )?;
        }
    }

    let t = synth(400, 32);
    let mut worst = 0.0f64;
    for trial in 0..LAW_BATCHES {
        let cfg = TrainingConfig {
            reduction: if trial % 2 == 0 {
                Reduction::Mean
            } else {
                Reduction::Sum
            },
            ..small_config(trial)
        };
        let f = init_params(&cfg.projector, 100 + trial);
        let m = init_params(&cfg.matcher_spec(), 200 + trial);
        let g = init_params(&cfg.critic_spec(), 300 + trial);
        let idx: Vec<usize> = (0..32).map(|_| rng.random_range(0..t.train.len())).collect();
        let lambda = rng.random_range(0.0..=1.0);
        let ev = |mut gr: Graph| gr.evaluate(&Bindings::new()).map(|o| o["loss"].item());
        let lreg = regularized_loss(&f, &m, &g, &cfg, &t.train, &idx, lambda)
            .and_then(|gr| ev(gr).map_err(Into::into))
            .map_err(|e| e.to_string())?;
        let lm = matching_loss(&f, &m, &cfg, &t.train, &idx)
            .and_then(|gr| ev(gr).map_err(Into::into))
            .map_err(|e| e.to_string())?;
        let feats = project_batch(&f, &cfg.projector, &t.train.pairs, &idx).map_err(|e| e.to_string())?;
        let og = critic_objective_value(&g, &cfg.critic_spec(), &feats, cfg.reduction).map_err(|e| e.to_string())?;
        let rel = ((lreg - lm) - lambda * og).abs() / lreg.abs().max(lm.abs());
        check(rel <= ADDITIVITY_TOL, format!("batch {trial}: relative gap {rel:e}"))?;
        worst = worst.max(rel);
    }
    Ok(format!(
        "{LAW_BATCHES} batches: antisymmetry bit-exact, zero law exact, additivity max rel {worst:.1e} <= {ADDITIVITY_TOL:e}"
    ))
}

fn oracle_consistency() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let base_x: Vec<f64> = (0..SHIFT_SAMPLES).map(|_| rng.sample(StandardNormal)).collect();
    let base_y: Vec<f64> = (0..SHIFT_SAMPLES).map(|_| rng.sample(StandardNormal)).collect();
    let cfg = TrainingConfig::default();
    let spec = CriticSpec {
        hidden: cfg.critic_hidden,
        activation: cfg.critic_activation,
        feature_dim: 1,
    };
    let critic = Critic::init(spec, 42, cfg.clip).map_err(|e| e.to_string())?;
    let (mut est, mut exact) = (Vec::new(), Vec::new());
    for (i, &delta) in SHIFTS.iter().enumerate() {
        let ys: Vec<f64> = base_y.iter().map(|y| y + delta).collect();
        let all = FeatureMatrix::new(1, base_x.clone(), ys.clone()).map_err(|e| e.to_string())?;
        let eval_idx: Vec<usize> = (0..SHIFT_HELD_OUT).collect();
        let fit_idx: Vec<usize> = (SHIFT_HELD_OUT..SHIFT_SAMPLES).collect();
        let eval = all.select(&eval_idx).map_err(|e| e.to_string())?;
        let fit = all.select(&fit_idx).map_err(|e| e.to_string())?;
        let rng = ChaCha8Rng::seed_from_u64(43 + i as u64);
        let e = estimate_wd_features(&critic, &fit, &eval, cfg.converge_steps, &cfg.regularizer_config(), rng)
            .map_err(|e| e.to_string())?;
        est.push(e);
        exact.push(w1_empirical_1d(&base_x, &ys).map_err(|e| e.to_string())?);
    }
    let scale = est.iter().cloned().fold(0.0f64, f64::max);
    for i in 1..est.len() {
        check(
            est[i] >= est[i - 1] - MONOTONE_SLACK * scale,
            format!(
                "estimate drops from {:.4} to {:.4} at δ={}",
                est[i - 1],
                est[i],
                SHIFTS[i]
            ),
        )?;
    }
    let r = oracle::pearson(&est, &exact);
    check(r > MIN_PEARSON, format!("Pearson r = {r:.5}; estimates {est:.4?}"))?;
    let took = start.elapsed();
    check(took < ORACLE_BUDGET, format!("took {took:.2?}"))?;
    Ok(format!(
        "Pearson r = {r:.5} > {MIN_PEARSON}, monotone within {MONOTONE_SLACK}, {took:.2?}"
    ))
}

fn zero_lambda_equivalence() -> Outcome {
    let t = synth(600, 51);
    let zero = TrainingConfig {
        lambda: 0.0,
        epochs: 4,
        ..small_config(51)
    };
    let off = TrainingConfig {
        regularizer: false,
        ..zero.clone()
    };
    let a = train(&zero, &t.train, &t.dev).map_err(|e| e.to_string())?;
    let b = train(&off, &t.train, &t.dev).map_err(|e| e.to_string())?;
    check(a.f.bit_eq(&b.f), "θ_F differs".into())?;
    check(a.m.bit_eq(&b.m), "θ_M differs".into())?;
    check(a.history.to_csv() == b.history.to_csv(), "history CSV differs".into())?;
    Ok(format!(
        "{} epochs: θ_F, θ_M and history bit-identical",
        a.history.len()
    ))
}

fn test_accuracy(cfg: &TrainingConfig, f: &ParamSet, m: &ParamSet, test: &LabeledPairs) -> Result<f64, String> {
    let logits = predict_logits(f, m, cfg, &test.pairs).map_err(|e| e.to_string())?;
    let preds: Vec<usize> = logits.iter().map(|r| argmax(r)).collect();
    accuracy(&preds, &test.labels).map_err(|e| e.to_string())
}

fn qualitative_reproduction() -> Outcome {
    let start = Instant::now();
    let mut wd_wins = 0;
    let mut acc_ok = 0;
    let mut rows = Vec::new();
    for s in 0..REPRO_SEEDS {
        let spec = SynthSpec {
            pairs: 5000,
            shift: 2.0,
            ..Default::default()
        };
        let data = generate_synthetic(&spec, 100 + s).map_err(|e| e.to_string())?;
        let proj = ProjectorSpec {
            embedding_dim: spec.latent_dim,
            feature_dim: 32,
            ..Default::default()
        };
        let split = |sp| LabeledPairs::new(&proj, &data.vocab, &data.triples(sp)).map_err(|e| e.to_string());
        let (tr, dv, te) = (split(Split::Train)?, split(Split::Dev)?, split(Split::Test)?);
        let base = TrainingConfig {
            seed: s,
            epochs: 10,
            patience: 0,
            wd_every: 0,
            converge_steps: 300,
            projector: proj.clone(),
            task: Task::Classification { classes: 2 },
            regularizer: false,
            ..Default::default()
        };
        let reg = TrainingConfig {
            regularizer: true,
            ..base.clone()
        };
        let mut res = Vec::new();
        for cfg in [&base, &reg] {
            let out = train(cfg, &tr, &dv).map_err(|e| e.to_string())?;
            // Same diagnostic seed and critic settings for both runs.
            let wd = wd_estimate(&base, &out.f, &tr, 0).map_err(|e| e.to_string())?;
            res.push((wd, test_accuracy(cfg, &out.f, &out.m, &te)?));
        }
        let ((wd_b, acc_b), (wd_r, acc_r)) = (res[0], res[1]);
        wd_wins += usize::from(wd_r < wd_b);
        acc_ok += usize::from(acc_r >= acc_b - ACCURACY_SLACK);
        rows.push(format!("s{s}: wd {wd_r:.3}/{wd_b:.3} acc {acc_r:.3}/{acc_b:.3}"));
    }
    let took = start.elapsed();
    let summary = format!(
        "wd lower in {wd_wins}/{REPRO_SEEDS}, accuracy kept in {acc_ok}/{REPRO_SEEDS}, {took:.1?} [{}]",
        rows.join("; ")
    );
    check(wd_wins >= REPRO_MIN_WINS && acc_ok >= REPRO_MIN_WINS, summary.clone())?;
    check(took < REPRO_BUDGET, summary.clone())?;
    Ok(summary)
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let mut compared = 0;
    for set in 0..METRIC_SETS {
        let nq = rng.random_range(1..6);
        let queries: Vec<Vec<(f64, bool)>> = (0..nq)
            .map(|_| {
                let n = rng.random_range(1..10);
                (0..n)
                    .map(|_| (f64::from(rng.random_range(0..5u8)) * 0.5, rng.random_bool(0.4)))
                    .collect()
            })
            .collect();
        let ranked: Vec<RankedQuery> = queries
            .iter()
            .enumerate()
            .map(|(i, c)| RankedQuery {
                query_id: format!("q{i}"),
                candidates: c.clone(),
            })
            .collect();
        match oracle::mean_of(&queries, oracle::average_precision) {
            Some(map) => {
                let mrr = oracle::mean_of(&queries, oracle::reciprocal_rank).unwrap();
                let got_map = mean_average_precision(&ranked).map_err(|e| e.to_string())?;
                let got_mrr = mean_reciprocal_rank(&ranked).map_err(|e| e.to_string())?;
                check(
                    (got_map - map).abs() <= METRIC_TOL,
                    format!("set {set}: MAP {got_map} vs {map}"),
                )?;
                check(
                    (got_mrr - mrr).abs() <= METRIC_TOL,
                    format!("set {set}: MRR {got_mrr} vs {mrr}"),
                )?;
            }
            None => check(
                mean_average_precision(&ranked).is_err(),
                format!("set {set}: unanswerable accepted"),
            )?,
        }
        let n = rng.random_range(1..30);
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let gold: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let acc = accuracy(&pred, &gold).map_err(|e| e.to_string())?;
        check(
            acc == oracle::accuracy(&pred, &gold),
            format!("set {set}: accuracy {acc}"),
        )?;
        compared += 1;
    }
    Ok(format!(
        "{compared} query sets: accuracy exact, MAP/MRR within {METRIC_TOL:e}"
    ))
}

fn determinism_and_resume() -> Outcome {
    let t = synth(600, 81);
    let cfg = TrainingConfig {
        epochs: 4,
        ..small_config(81)
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut csv = Vec::new();
    let mut runs = Vec::new();
    for i in 0..2 {
        let out = train(&cfg, &t.train, &t.dev).map_err(|e| e.to_string())?;
        let path = dir.path().join(format!("history{i}.csv"));
        out.history.write_csv(&path).map_err(|e| e.to_string())?;
        csv.push(std::fs::read(&path).map_err(|e| e.to_string())?);
        runs.push(out);
    }
    check(csv[0] == csv[1], "history files differ".into())?;
    check(
        runs[0].f.bit_eq(&runs[1].f) && runs[0].m.bit_eq(&runs[1].m),
        "parameters differ".into(),
    )?;

    let mut full = Trainer::new(cfg.clone(), &t.train, &t.dev).map_err(|e| e.to_string())?;
    full.run().map_err(|e| e.to_string())?;

    let ckpt_path = dir.path().join("mid.ckpt");
    let mut half = Trainer::new(cfg.clone(), &t.train, &t.dev).map_err(|e| e.to_string())?;
    half.run_epoch().map_err(|e| e.to_string())?;
    half.run_epoch().map_err(|e| e.to_string())?;
    save_checkpoint(&ckpt_path, &half.checkpoint()).map_err(|e| e.to_string())?;
    drop(half);
    let ckpt = load_checkpoint(&ckpt_path).map_err(|e| e.to_string())?;
    let mut resumed = Trainer::resume(ckpt, &t.train, &t.dev).map_err(|e| e.to_string())?;
    resumed.run().map_err(|e| e.to_string())?;

    let (a, b) = (full.state(), resumed.state());
    check(a.f.bit_eq(&b.f), "θ_F differs after resume".into())?;
    check(a.m.bit_eq(&b.m), "θ_M differs after resume".into())?;
    check(
        a.critic.params.bit_eq(&b.critic.params),
        "θ_G differs after resume".into(),
    )?;
    check(
        full.history().to_csv() == resumed.history().to_csv(),
        "history differs after resume".into(),
    )?;
    Ok(format!(
        "2 runs identical; resume after epoch 2 of {} matches bit-exactly",
        cfg.epochs
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("gradient-check", gradient_checks),
        ("clipping-invariant", clipping_invariant),
        ("algebraic-laws", algebraic_laws),
        ("oracle-consistency", oracle_consistency),
        ("lambda-zero-equivalence", zero_lambda_equivalence),
        ("qualitative-reproduction", qualitative_reproduction),
        ("metric-oracles", metric_oracles),
        ("determinism-and-resume", determinism_and_resume),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        match run() {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name}: {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
