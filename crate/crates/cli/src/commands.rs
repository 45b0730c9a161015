use std::fs;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use wdmatch::data::{
    convert::{convert, SourceFormat},
    generate_synthetic, load_embeddings, load_triples, write_records, Oov, Schema, Split, SynthSpec, Triple,
    Vocabulary,
};
use wdmatch::eval::{
    accuracy, dump_features, group_queries, mean_average_precision, mean_reciprocal_rank, w1_empirical_1d, MetricReport,
};
use wdmatch::models::{PreparedPairs, Task};
use wdmatch::rng::{child_indexed, Stream};
use wdmatch::selftest::{run_selftest, SelftestOptions};
use wdmatch::trainer::{
    argmax, load_checkpoint, predict_logits, save_checkpoint, wd_estimate_pairs, Checkpoint, LabeledPairs, Trainer,
    TrainingConfig,
};
use wdmatch::{Error, Result};

use crate::run_config::{config_error, sha256_file, unix_now, FileDigest, Overrides, RunConfig, RunManifest};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const SCHEMA_FILE: &str = "schema.json";
pub const METRICS_FILE: &str = "metrics.txt";
pub const OUT_ENV: &str = "WDMATCH_OUT";

pub enum TrainSource {
    Config(PathBuf),
    Manifest(PathBuf),
}

pub struct TrainArgs {
    pub source: TrainSource,
    pub overrides: Overrides,
    pub out_dir: Option<PathBuf>,
    pub resume: Option<PathBuf>,
}

fn default_out_dir(stem: &str, seed: u64) -> PathBuf {
    let root = std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"));
    root.join(format!("{stem}-seed{seed}"))
}

/// Vocabulary and labeled splits. Out-of-vocabulary tokens of every split
/// get frozen random vectors from the init stream, in file order.
struct Loaded {
    vocab: Vocabulary,
    train: LabeledPairs,
    dev: LabeledPairs,
    test: Option<LabeledPairs>,
}

fn load_run_data(cfg: &RunConfig) -> Result<Loaded> {
    let t = &cfg.training;
    let dim = t.projector.embedding_dim;
    let mut vocab = match &cfg.embeddings {
        Some(p) => {
            let load = load_embeddings(p, dim)?;
            if load.duplicates > 0 {
                log::warn!("{}: {} duplicate tokens ignored", p.display(), load.duplicates);
            }
            load.vocab
        }
        None => Vocabulary::new(dim),
    };
    let mut rng = child_indexed(t.seed, Stream::Init, 1);
    let mut read = |path: &Path, vocab: &mut Vocabulary| -> Result<Vec<Triple>> {
        let loaded = load_triples(path, &cfg.schema, vocab, Oov::Extend(&mut rng))?;
        if loaded.skipped > 0 {
            log::info!("{}: skipped {} unlabeled rows", path.display(), loaded.skipped);
        }
        Ok(loaded.triples)
    };
    let train = read(&cfg.train, &mut vocab)?;
    let dev = read(&cfg.dev, &mut vocab)?;
    let test = cfg.test.as_ref().map(|p| read(p, &mut vocab)).transpose()?;
    let spec = &t.projector;
    Ok(Loaded {
        train: LabeledPairs::new(spec, &vocab, &train)?,
        dev: LabeledPairs::new(spec, &vocab, &dev)?,
        test: test.map(|x| LabeledPairs::new(spec, &vocab, &x)).transpose()?,
        vocab,
    })
}

fn check_schema_task(schema: &Schema, task: Task) -> Result<()> {
    match (schema, task) {
        (Schema::Classification { labels }, Task::Classification { classes }) if labels.len() == classes => Ok(()),
        (Schema::Ranking, Task::Ranking) => Ok(()),
        _ => Err(Error::config(
            "task",
            format!("task {task:?} does not fit the dataset schema {schema:?}"),
        )),
    }
}

fn metric_reports(
    cfg: &TrainingConfig,
    f: &wdmatch::numcore::ParamSet,
    m: &wdmatch::numcore::ParamSet,
    data: &LabeledPairs,
) -> Result<Vec<MetricReport>> {
    let logits = predict_logits(f, m, cfg, &data.pairs)?;
    match cfg.task {
        Task::Classification { .. } => {
            let preds: Vec<usize> = logits.iter().map(|r| argmax(r)).collect();
            Ok(vec![MetricReport {
                metric: "accuracy",
                value: accuracy(&preds, &data.labels)?,
                count_field: "n_examples",
                count: data.len(),
            }])
        }
        Task::Ranking => {
            let ids = data
                .query_ids
                .as_ref()
                .ok_or_else(|| Error::Data("ranking data needs query ids".into()))?;
            let scores: Vec<f64> = logits.iter().map(|r| r[0]).collect();
            let queries = group_queries(ids, &scores, &data.labels)?;
            let answerable = queries.iter().filter(|q| q.candidates.iter().any(|c| c.1)).count();
            Ok(vec![
                MetricReport {
                    metric: "map",
                    value: mean_average_precision(&queries)?,
                    count_field: "n_queries",
                    count: answerable,
                },
                MetricReport {
                    metric: "mrr",
                    value: mean_reciprocal_rank(&queries)?,
                    count_field: "n_queries",
                    count: answerable,
                },
            ])
        }
    }
}

pub fn train(args: TrainArgs) -> Result<()> {
    let (mut run, stem, from_manifest) = match &args.source {
        TrainSource::Config(p) => {
            let stem = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".into());
            (RunConfig::load(p)?, stem, false)
        }
        TrainSource::Manifest(p) => {
            let m = RunManifest::load(p)?;
            m.verify_inputs()?;
            (m.config, "rerun".to_string(), true)
        }
    };
    args.overrides.apply(&mut run.training);
    let resumed = args.resume.as_ref().map(|p| load_checkpoint(p)).transpose()?;
    if let Some(ckpt) = &resumed {
        ckpt.expect_feature_dim(run.training.projector.feature_dim)?;
        let epochs = run.training.epochs;
        // The checkpoint's config governs the run; only the epoch budget may grow.
        run.training = TrainingConfig {
            epochs,
            ..ckpt.config.clone()
        };
    }
    run.training.validate()?;
    check_schema_task(&run.schema, run.training.task)?;

    let out_dir = match (&args.out_dir, &args.resume) {
        (Some(d), _) => d.clone(),
        (None, Some(ckpt)) => ckpt.parent().map(Path::to_path_buf).unwrap_or_default(),
        (None, None) => default_out_dir(&stem, run.training.seed),
    };
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let mut manifest = RunManifest::new(run.clone(), out_dir.clone())?;
    manifest.write(&manifest_path)?;
    let schema_text = serde_json::to_string_pretty(&run.schema).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(out_dir.join(SCHEMA_FILE), schema_text + "\n").map_err(|e| Error::io(out_dir.join(SCHEMA_FILE), e))?;
    log::info!(
        "run directory {} ({})",
        out_dir.display(),
        if from_manifest { "from manifest" } else { "from config" }
    );

    let data = load_run_data(&run)?;
    data.vocab.write_glove(&out_dir.join(VOCAB_FILE))?;
    let mut trainer = match resumed {
        Some(mut ckpt) => {
            ckpt.config.epochs = run.training.epochs;
            Trainer::resume(ckpt, &data.train, &data.dev)?
        }
        None => Trainer::new(run.training.clone(), &data.train, &data.dev)?,
    };
    let ckpt_path = out_dir.join(CHECKPOINT_FILE);
    let hist_path = out_dir.join(HISTORY_FILE);
    trainer.history().write_csv(&hist_path)?;
    trainer.run_with(|t| {
        save_checkpoint(&ckpt_path, &t.checkpoint())?;
        t.history().write_csv(&hist_path)
    })?;
    save_checkpoint(&ckpt_path, &trainer.checkpoint())?;
    trainer.history().write_csv(&hist_path)?;

    let outcome = trainer.outcome();
    let mut lines = Vec::new();
    for (split, set) in [("dev", Some(&data.dev)), ("test", data.test.as_ref())] {
        if let Some(set) = set {
            for r in metric_reports(trainer.config(), &outcome.f, &outcome.m, set)? {
                lines.push(format!("split={split} {r}"));
            }
        }
    }
    let metrics_path = out_dir.join(METRICS_FILE);
    fs::write(&metrics_path, lines.join("\n") + "\n").map_err(|e| Error::io(&metrics_path, e))?;
    for l in &lines {
        println!("{l}");
    }

    manifest.finished_unix = Some(unix_now());
    manifest.artifacts = [HISTORY_FILE, CHECKPOINT_FILE, VOCAB_FILE, SCHEMA_FILE, METRICS_FILE]
        .iter()
        .map(|name| {
            let path = out_dir.join(name);
            Ok(FileDigest {
                name: name.to_string(),
                sha256: sha256_file(&path)?,
                path,
            })
        })
        .collect::<Result<_>>()?;
    manifest.write(&manifest_path)?;
    println!("run_dir={}", out_dir.display());
    Ok(())
}

/// A checkpoint with its sibling vocabulary and schema.
struct Trained {
    ckpt: Checkpoint,
    vocab: Vocabulary,
    schema: Schema,
}

fn load_trained(ckpt_path: &Path, vocab: Option<&Path>, schema: Option<&Path>) -> Result<Trained> {
    let ckpt = load_checkpoint(ckpt_path)?;
    let dir = ckpt_path.parent().unwrap_or(Path::new("."));
    let vocab_path = vocab.map(Path::to_path_buf).unwrap_or_else(|| dir.join(VOCAB_FILE));
    let schema_path = schema.map(Path::to_path_buf).unwrap_or_else(|| dir.join(SCHEMA_FILE));
    let vocab = load_embeddings(&vocab_path, ckpt.config.projector.embedding_dim)?.vocab;
    let text = fs::read_to_string(&schema_path).map_err(|e| Error::io(&schema_path, e))?;
    let schema: Schema = serde_json::from_str(&text).map_err(|e| config_error(&e))?;
    Ok(Trained { ckpt, vocab, schema })
}

fn read_eval_data(t: &Trained, data: &Path) -> Result<Vec<Triple>> {
    let mut vocab = t.vocab.clone();
    let loaded = load_triples::<ChaCha8Rng>(data, &t.schema, &mut vocab, Oov::Unknown)?;
    Ok(loaded.triples)
}

pub fn eval(ckpt: &Path, data: &Path, task: Option<Task>, vocab: Option<&Path>, schema: Option<&Path>) -> Result<()> {
    let t = load_trained(ckpt, vocab, schema)?;
    if let Some(task) = task {
        let have = t.ckpt.config.task;
        let same_kind = matches!(
            (task, have),
            (Task::Ranking, Task::Ranking) | (Task::Classification { .. }, Task::Classification { .. })
        );
        if !same_kind {
            return Err(Error::config("task", format!("checkpoint was trained for {have:?}")));
        }
    }
    check_schema_task(&t.schema, t.ckpt.config.task)?;
    let triples = read_eval_data(&t, data)?;
    let set = LabeledPairs::new(&t.ckpt.config.projector, &t.vocab, &triples)?;
    set.check_labels(t.ckpt.config.task)?;
    let (f, m) = t.ckpt.best_params();
    for r in metric_reports(&t.ckpt.config, f, m, &set)? {
        println!("{r}");
    }
    Ok(())
}

pub struct DiagnoseArgs<'a> {
    pub a: &'a Path,
    pub b: &'a Path,
    pub data: &'a Path,
    pub out: &'a Path,
    pub seed: u64,
}

pub fn diagnose_wd(args: DiagnoseArgs<'_>) -> Result<()> {
    let a = load_trained(args.a, None, None)?;
    let b = load_trained(args.b, None, None)?;
    b.ckpt.expect_feature_dim(a.ckpt.feature_dim())?;
    // Both estimates use the same critic settings and the same scratch seed.
    let diag = TrainingConfig {
        seed: args.seed,
        ..a.ckpt.config.clone()
    };
    let estimate = |t: &Trained| -> Result<f64> {
        let triples = read_eval_data(t, args.data)?;
        let pairs = PreparedPairs::new(&t.ckpt.config.projector, &t.vocab, &triples)?;
        let (f, _) = t.ckpt.best_params();
        wd_estimate_pairs(&diag, &t.ckpt.config.projector, f, &pairs, 0)
    };
    let (wa, wb) = (estimate(&a)?, estimate(&b)?);
    let mut csv = String::from("epoch,wd_a,wd_b,wd_diff\n");
    let (ha, hb) = (a.ckpt.state.history.records(), b.ckpt.state.history.records());
    if ha.len() == hb.len() {
        for (x, y) in ha.iter().zip(hb) {
            if let (Some(p), Some(q)) = (x.wd_estimate, y.wd_estimate) {
                csv.push_str(&format!("{},{p},{q},{}\n", x.epoch, p - q));
            }
        }
    }
    csv.push_str(&format!("final,{wa},{wb},{}\n", wa - wb));
    fs::write(args.out, csv).map_err(|e| Error::io(args.out, e))?;
    println!("wd_a={wa} wd_b={wb} wd_diff={}", wa - wb);
    Ok(())
}

pub fn synth(spec_path: &Path, out_dir: &Path, seed: u64) -> Result<()> {
    let text = fs::read_to_string(spec_path).map_err(|e| Error::io(spec_path, e))?;
    let spec: SynthSpec = serde_json::from_str(&text).map_err(|e| config_error(&e))?;
    spec.validate()?;
    let data = generate_synthetic(&spec, seed)?;
    data.write_to_dir(out_dir)?;
    let run = RunConfig {
        train: "train.tsv".into(),
        dev: "dev.tsv".into(),
        test: Some("test.tsv".into()),
        embeddings: Some("embeddings.txt".into()),
        schema: SynthSpec::schema(),
        training: TrainingConfig {
            projector: wdmatch::models::ProjectorSpec {
                embedding_dim: spec.latent_dim,
                ..Default::default()
            },
            task: Task::Classification { classes: 2 },
            ..Default::default()
        },
    };
    let path = out_dir.join("config.json");
    let text = serde_json::to_string_pretty(&run).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    let w1 = w1_empirical_1d(
        &data.projected_latents(Split::Train, false),
        &data.projected_latents(Split::Train, true),
    )?;
    println!("oracle_w1={w1} shift={} pairs={}", spec.shift, spec.pairs);
    Ok(())
}

pub fn dump(ckpt: &Path, data: &Path, out: &Path, vocab: Option<&Path>, schema: Option<&Path>) -> Result<()> {
    let t = load_trained(ckpt, vocab, schema)?;
    let triples = read_eval_data(&t, data)?;
    let pairs = PreparedPairs::new(&t.ckpt.config.projector, &t.vocab, &triples)?;
    let (f, _) = t.ckpt.best_params();
    dump_features(f, &t.ckpt.config.projector, &pairs, out)?;
    println!("rows={} path={}", 2 * pairs.len(), out.display());
    Ok(())
}

/// Returns whether every suite passed.
pub fn selftest(inject_fault: bool) -> bool {
    let report = run_selftest(SelftestOptions {
        inject_gradient_fault: inject_fault,
    });
    for r in &report {
        println!("{r}");
    }
    report.iter().all(|r| r.passed)
}

pub fn convert_cmd(format: &str, input: &Path, output: &Path) -> Result<()> {
    let fmt: SourceFormat = format.parse()?;
    let records = convert(input, fmt)?;
    write_records(output, &records)?;
    println!("records={}", records.len());
    Ok(())
}
