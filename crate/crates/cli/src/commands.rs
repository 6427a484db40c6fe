use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use aria_core::attacks::{hash_inversion, realize_and_requery, untargeted_embedding_attack, AttackBudget};
use aria_core::corpus::{generate_with_roles, make_query_sets, read_corpus, write_corpus, CorpusImage, Role};
use aria_core::eval::{
    build_flat_index, embed_all, evaluate_comparator, evaluate_queries, make_comparator_pairs, RetrievalSettings,
};
use aria_core::io::write_ppm;
use aria_core::metrics::{
    write_comparator_csv, write_fscore_csv, write_retrieval_csv, EvalReport, PairRecord, QueryKind, QueryRecord,
};
use aria_core::model::{sign_hash, ComparatorModel, FingerprintModel};
use aria_core::parallel::try_map_indexed;
use aria_core::retrieval::{HashIndex, IvfPqIndex, VectorIndex};
use aria_core::tensor::Tensor;
use aria_core::training::{
    overfitting_probe, train_comparator, train_fingerprint, ProbeReport, RecallProbe, TrainingCurve,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{budget_label, ExperimentConfig, IndexKind};
use crate::{Cli, CliError, Command, TrainOverrides};

type CliResult<T = ()> = Result<T, CliError>;

fn require(path: &Path) -> CliResult<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::Config(format!("missing input {}", path.display())))
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn create_out(dir: &Path) -> CliResult<&Path> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

struct Corpus {
    all: Vec<CorpusImage>,
    sources: Vec<CorpusImage>,
}

fn load_corpus(dir: &Path) -> CliResult<Corpus> {
    require(&dir.join("manifest.json"))?;
    let (manifest, all) = read_corpus(dir)?;
    let sources: Vec<CorpusImage> = manifest
        .images
        .iter()
        .zip(&all)
        .filter(|(e, _)| e.role == Role::Source)
        .map(|(_, im)| im.clone())
        .collect();
    if sources.is_empty() {
        return Err(CliError::Config(format!("corpus {} has no source images", dir.display())));
    }
    Ok(Corpus { all, sources })
}

fn load_fingerprint(path: &Path) -> CliResult<FingerprintModel> {
    Ok(FingerprintModel::load(require(path)?)?)
}

fn load_comparator(path: &Path) -> CliResult<ComparatorModel> {
    Ok(ComparatorModel::load(require(path)?)?)
}

fn apply_train(cfg: &mut aria_core::training::TrainConfig, o: &TrainOverrides) {
    if let Some(v) = o.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = o.inner_steps {
        cfg.inner_steps = v;
    }
    if let Some(v) = o.eps {
        cfg.train_eps = v;
        cfg.inner_step_size = v / 2.0;
    }
    if let Some(v) = o.batch_pairs {
        cfg.batch_pairs = v;
    }
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
}

fn apply_comparator(cfg: &mut aria_core::training::ComparatorTrainConfig, o: &TrainOverrides) {
    if let Some(v) = o.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = o.inner_steps {
        cfg.inner_steps = v;
    }
    if let Some(v) = o.eps {
        cfg.train_eps = v;
        cfg.inner_step_size = v / 2.0;
    }
    if let Some(v) = o.batch_pairs {
        cfg.batch_pairs = v;
    }
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
}

/// Writes `config_echo.json` with every effective parameter.
fn echo(out: &Path, command: &str, inputs: Value, cfg: &ExperimentConfig) -> CliResult {
    write_json(
        &out.join("config_echo.json"),
        &json!({ "command": command, "inputs": inputs, "config": cfg }),
    )
}

fn path_value(p: &Path) -> Value {
    Value::String(p.display().to_string())
}

pub fn run(cli: Cli) -> CliResult {
    let mut cfg = ExperimentConfig::load(cli.config.as_deref())?;
    cfg.set_threads(cli.threads);
    match cli.command {
        Command::GenCorpus {
            out,
            sources,
            distractors,
            size,
            seed,
        } => {
            let c = &mut cfg.corpus;
            c.sources = sources.unwrap_or(c.sources);
            c.distractors = distractors.unwrap_or(c.distractors);
            c.size = size.unwrap_or(c.size);
            c.seed = seed.unwrap_or(c.seed);
            cfg.validate()?;
            if cfg.corpus.sources == 0 {
                return Err(CliError::Config("corpus needs at least one source".into()));
            }
            let out = create_out(&out.out)?;
            let c = &cfg.corpus;
            let (images, roles) = generate_with_roles(c.sources, c.distractors, c.size, c.seed)?;
            write_corpus(out, c.seed, &images, &roles)?;
            echo(out, "gen-corpus", json!({}), &cfg)?;
            println!("wrote {} images to {}", images.len(), out.display());
            Ok(())
        }
        Command::TrainFingerprint {
            out,
            corpus,
            init,
            train,
            alpha,
            eval_every,
        } => {
            apply_train(&mut cfg.train, &train);
            cfg.train.alpha = alpha.unwrap_or(cfg.train.alpha);
            cfg.train.eval_every = eval_every.unwrap_or(cfg.train.eval_every);
            let data = load_corpus(&corpus)?;
            let mut model = match &init {
                Some(p) => load_fingerprint(p)?,
                None => FingerprintModel::init(cfg.model.clone(), cfg.model_seed)?,
            };
            cfg.model = model.config().clone();
            cfg.validate()?;
            let out = create_out(&out.out)?;
            let queries = if cfg.train.eval_every > 0 {
                let n = cfg.probe.queries.min(data.sources.len());
                make_query_sets(&data.sources, n, cfg.queries.seed, cfg.threads)?.non_editorial
            } else {
                Vec::new()
            };
            let probe = RecallProbe {
                database: &data.all,
                queries: &queries,
                budget: cfg.probe.budget.clone(),
                realize: cfg.queries.realize,
                threads: cfg.threads,
            };
            let curve = train_fingerprint(&mut model, &data.sources, &cfg.train, (!queries.is_empty()).then_some(&probe))?;
            model.save(out.join("fingerprint.bin"))?;
            write_json(&out.join("curve.json"), &curve)?;
            write_curves_csv(&out.join("curve.csv"), &[("train".to_string(), &curve)])?;
            let inputs = json!({ "corpus": path_value(&corpus), "init": init.as_deref().map(path_value) });
            echo(out, "train-fingerprint", inputs, &cfg)?;
            if let Some(r) = curve.last() {
                println!("epoch {} clean loss {:.4} robust loss {:.4}", r.epoch, r.clean_loss, r.robust_loss);
            }
            Ok(())
        }
        Command::TrainComparator {
            out,
            corpus,
            init,
            train,
            pairs_per_epoch,
        } => {
            apply_comparator(&mut cfg.comparator, &train);
            cfg.comparator.pairs_per_epoch = pairs_per_epoch.unwrap_or(cfg.comparator.pairs_per_epoch);
            let data = load_corpus(&corpus)?;
            let mut model = match &init {
                Some(p) => load_comparator(p)?,
                None => ComparatorModel::init(cfg.comparator_model.clone(), cfg.model_seed)?,
            };
            cfg.comparator_model = model.config().clone();
            cfg.validate()?;
            let out = create_out(&out.out)?;
            let curve = train_comparator(&mut model, &data.sources, &cfg.comparator)?;
            model.save(out.join("comparator.bin"))?;
            write_json(&out.join("comparator_curve.json"), &curve)?;
            let inputs = json!({ "corpus": path_value(&corpus), "init": init.as_deref().map(path_value) });
            echo(out, "train-comparator", inputs, &cfg)?;
            if let Some(r) = curve.last() {
                println!("epoch {} clean loss {:.4} robust loss {:.4}", r.epoch, r.clean_loss, r.robust_loss);
            }
            Ok(())
        }
        Command::Attack {
            out,
            model,
            corpus,
            budget,
            count,
        } => {
            if let Some(b) = budget {
                cfg.budgets = vec![b];
            }
            cfg.queries.count = count.unwrap_or(cfg.queries.count);
            cfg.validate()?;
            let budget = cfg
                .budgets
                .first()
                .cloned()
                .ok_or_else(|| CliError::Config("no attack budget configured".into()))?;
            let fp = load_fingerprint(&model)?;
            let data = load_corpus(&corpus)?;
            let out = create_out(&out.out)?;
            run_attack(out, &fp, &data, &budget, &cfg)?;
            echo(out, "attack", json!({ "model": path_value(&model), "corpus": path_value(&corpus) }), &cfg)
        }
        Command::InvertHash {
            out,
            model,
            corpus,
            targets,
            iters,
        } => {
            cfg.inversion.targets = targets.unwrap_or(cfg.inversion.targets);
            cfg.inversion.iters = iters.unwrap_or(cfg.inversion.iters);
            cfg.validate()?;
            let fp = load_fingerprint(&model)?;
            let data = load_corpus(&corpus)?;
            let out = create_out(&out.out)?;
            run_inversion(out, &fp, &data.all, &cfg)?;
            echo(out, "invert-hash", json!({ "model": path_value(&model), "corpus": path_value(&corpus) }), &cfg)
        }
        Command::BuildIndex {
            out,
            model,
            corpus,
            kind,
            nlist,
            m,
            nbits,
        } => {
            let ip = &mut cfg.index;
            ip.kind = kind.unwrap_or(ip.kind);
            ip.nlist = nlist.unwrap_or(ip.nlist);
            ip.m = m.unwrap_or(ip.m);
            ip.nbits = nbits.unwrap_or(ip.nbits);
            cfg.validate()?;
            let fp = load_fingerprint(&model)?;
            let data = load_corpus(&corpus)?;
            let out = create_out(&out.out)?;
            let description = build_index(out, &fp, &data.all, &cfg)?;
            write_json(&out.join("index.json"), &description)?;
            echo(out, "build-index", json!({ "model": path_value(&model), "corpus": path_value(&corpus) }), &cfg)?;
            println!("indexed {} images", data.all.len());
            Ok(())
        }
        Command::Evaluate {
            out,
            model,
            corpus,
            index,
            comparator,
            budget,
            no_attack,
            queries,
            pairs,
            nprobe,
            name,
        } => {
            if no_attack {
                cfg.budgets.clear();
            } else if !budget.is_empty() {
                cfg.budgets = budget;
            }
            cfg.queries.count = queries.unwrap_or(cfg.queries.count);
            cfg.queries.pairs = pairs.unwrap_or(cfg.queries.pairs);
            cfg.index.nprobe = nprobe.unwrap_or(cfg.index.nprobe);
            cfg.validate()?;
            let fp = load_fingerprint(&model)?;
            let cmp = comparator.as_deref().map(load_comparator).transpose()?;
            let data = load_corpus(&corpus)?;
            let index = match &index {
                Some(p) => VectorIndex::load(require(p)?)
                    .map_err(|e| CliError::Config(format!("cannot use index {}: {e}", p.display())))?,
                None => VectorIndex::Flat(build_flat_index(&fp, &data.all, cfg.threads)?),
            };
            if index.dim() != fp.config().embed_dim {
                return Err(CliError::Config(format!(
                    "index dimension {} does not match the model's {}",
                    index.dim(),
                    fp.config().embed_dim
                )));
            }
            let name = name.unwrap_or_else(|| {
                model.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned())
            });
            let out = create_out(&out.out)?;
            let inputs = json!({
                "model": path_value(&model),
                "corpus": path_value(&corpus),
                "index": index_path_value(&index),
                "comparator": comparator.as_deref().map(path_value),
            });
            run_evaluate(out, &name, &fp, cmp.as_ref(), &index, &data, &cfg, &inputs)?;
            echo(out, "evaluate", inputs, &cfg)
        }
        Command::ProbeOverfitting {
            out,
            corpus,
            init,
            train,
            eval_every,
        } => {
            apply_train(&mut cfg.train, &train);
            cfg.train.eval_every = eval_every.unwrap_or(cfg.train.eval_every.max(1));
            let data = load_corpus(&corpus)?;
            let model = match &init {
                Some(p) => load_fingerprint(p)?,
                None => FingerprintModel::init(cfg.model.clone(), cfg.model_seed)?,
            };
            cfg.model = model.config().clone();
            cfg.validate()?;
            let out = create_out(&out.out)?;
            let n = cfg.probe.queries.min(data.sources.len());
            let queries = make_query_sets(&data.sources, n, cfg.queries.seed, cfg.threads)?.non_editorial;
            let probe = RecallProbe {
                database: &data.all,
                queries: &queries,
                budget: cfg.probe.budget.clone(),
                realize: cfg.queries.realize,
                threads: cfg.threads,
            };
            let report = overfitting_probe(&model, &data.sources, &cfg.train, &probe)?;
            write_json(&out.join("probe.json"), &report)?;
            write_curves_csv(&out.join("curves.csv"), &probe_curves("probe", &report))?;
            let inputs = json!({ "corpus": path_value(&corpus), "init": init.as_deref().map(path_value) });
            echo(out, "probe-overfitting", inputs, &cfg)?;
            println!(
                "final adversarial R@1: 1-step {:?}, 3-step {:?}",
                report.final_adversarial_recall_one_step, report.final_adversarial_recall_three_step
            );
            Ok(())
        }
        Command::Report { out, inputs } => {
            let out = create_out(&out.out)?;
            run_report(out, &inputs)?;
            echo(
                out,
                "report",
                json!({ "inputs": inputs.iter().map(|p| path_value(p)).collect::<Vec<_>>() }),
                &cfg,
            )
        }
    }
}

fn index_path_value(index: &VectorIndex) -> Value {
    serde_json::to_value(index.describe()).unwrap_or(Value::Null)
}

#[derive(Serialize)]
struct AttackSummary {
    query_id: u64,
    gt_id: u64,
    feasible: bool,
    realized_linf: f64,
    /// Cosine distance of query and original fingerprints.
    clean_distance: f64,
    adversarial_distance: f64,
    objective_trace: Vec<f64>,
}

fn cosine_distance(a: &[f32], b: &[f32]) -> f64 {
    1.0 - a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum::<f64>()
}

fn run_attack(out: &Path, model: &FingerprintModel, data: &Corpus, budget: &AttackBudget, cfg: &ExperimentConfig) -> CliResult {
    let n = cfg.queries.count.min(data.sources.len());
    let queries = make_query_sets(&data.sources, n, cfg.queries.seed, cfg.threads)?.non_editorial;
    let originals: HashMap<u64, &Tensor<f32>> = data.sources.iter().map(|c| (c.id, &c.pixels)).collect();
    let dir = out.join("adversarial");
    fs::create_dir_all(&dir)?;
    let results = try_map_indexed(queries.len(), cfg.threads, |i| {
        let q = &queries[i];
        let orig = originals[&q.gt_id];
        let outcome = untargeted_embedding_attack(model, &q.image, orig, budget)?;
        let adv = if cfg.queries.realize {
            realize_and_requery(&outcome.delta, &q.image)?
        } else {
            outcome.adversarial(&q.image)
        };
        let reference = model.embed_any(orig)?;
        let clean = model.embed_any(&q.image)?;
        let attacked = model.embed_any(&adv)?;
        let record = aria_core::attacks::AttackRecord::new(q.query_id, &outcome, &q.image, &adv)?;
        Ok::<_, aria_core::Error>((
            AttackSummary {
                query_id: q.query_id,
                gt_id: q.gt_id,
                feasible: record.feasible,
                realized_linf: record.realized_linf,
                clean_distance: cosine_distance(&clean.values, &reference.values),
                adversarial_distance: cosine_distance(&attacked.values, &reference.values),
                objective_trace: record.objective_trace,
            },
            adv,
        ))
    })?;
    let mut summaries = Vec::with_capacity(results.len());
    for (s, adv) in results {
        write_ppm(dir.join(format!("{:06}.ppm", s.query_id)), &adv)?;
        summaries.push(s);
    }
    let mean = |f: fn(&AttackSummary) -> f64| summaries.iter().map(f).sum::<f64>() / summaries.len().max(1) as f64;
    let clean = mean(|s| s.clean_distance);
    let adv = mean(|s| s.adversarial_distance);
    write_json(
        &out.join("attacks.json"),
        &json!({ "budget": budget, "mean_clean_distance": clean, "mean_adversarial_distance": adv, "queries": summaries }),
    )?;
    println!("attacked {} queries: mean distance {clean:.4} -> {adv:.4}", summaries.len());
    Ok(())
}

#[derive(Serialize)]
struct InversionSummary {
    target_id: u64,
    matched: bool,
    iterations: usize,
    hamming: u32,
}

fn run_inversion(out: &Path, model: &FingerprintModel, images: &[CorpusImage], cfg: &ExperimentConfig) -> CliResult {
    let p = &cfg.inversion;
    let n = p.targets.min(images.len());
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut picks = rand::seq::index::sample(&mut rng, images.len(), n).into_vec();
    picks.sort_unstable();
    let dir = out.join("inverted");
    fs::create_dir_all(&dir)?;
    let results = try_map_indexed(picks.len(), cfg.threads, |i| {
        let target_image = &images[picks[i]];
        let target = sign_hash(&model.embed_any(&target_image.pixels)?);
        let inv = hash_inversion(model, &target, p.beta, p.iters)?;
        let reached = sign_hash(&model.embed_any(&inv.image)?);
        Ok::<_, aria_core::Error>((
            InversionSummary {
                target_id: target_image.id,
                matched: inv.matched,
                iterations: inv.iterations,
                hamming: reached.hamming(&target),
            },
            inv.image,
        ))
    })?;
    let mut summaries = Vec::with_capacity(results.len());
    for (s, image) in results {
        write_ppm(dir.join(format!("{:06}.ppm", s.target_id)), &image)?;
        summaries.push(s);
    }
    let matched = summaries.iter().filter(|s| s.matched).count();
    write_json(
        &out.join("inversion.json"),
        &json!({ "beta": p.beta, "iters": p.iters, "matched": matched, "targets": summaries }),
    )?;
    println!("exact hash match for {matched} of {} targets", summaries.len());
    Ok(())
}

fn build_index(out: &Path, model: &FingerprintModel, images: &[CorpusImage], cfg: &ExperimentConfig) -> CliResult<Value> {
    let path = out.join("index.bin");
    let ids: Vec<u64> = images.iter().map(|c| c.id).collect();
    match cfg.index.kind {
        IndexKind::Flat => {
            let index = build_flat_index(model, images, cfg.threads)?;
            index.save(&path)?;
            Ok(serde_json::to_value(VectorIndex::Flat(index).describe())?)
        }
        IndexKind::Ivfpq => {
            let refs: Vec<&Tensor<f32>> = images.iter().map(|c| &c.pixels).collect();
            let data = embed_all(model, &refs, cfg.threads)?.into_iter().flat_map(|f| f.values).collect();
            let index = IvfPqIndex::build(ids, data, model.config().embed_dim, cfg.index.ivfpq())?;
            index.save(&path)?;
            Ok(serde_json::to_value(VectorIndex::IvfPq(index).describe())?)
        }
        IndexKind::Hash => {
            let refs: Vec<&Tensor<f32>> = images.iter().map(|c| &c.pixels).collect();
            let hashes: Vec<_> = embed_all(model, &refs, cfg.threads)?.iter().map(sign_hash).collect();
            let index = HashIndex::build(ids, &hashes)?;
            index.save(&path)?;
            Ok(json!({ "kind": "hash", "size": index.len(), "bits": index.bits() }))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_evaluate(
    out: &Path,
    name: &str,
    model: &FingerprintModel,
    comparator: Option<&ComparatorModel>,
    index: &VectorIndex,
    data: &Corpus,
    cfg: &ExperimentConfig,
    inputs: &Value,
) -> CliResult {
    let n = cfg.queries.count.min(data.sources.len());
    let sets = make_query_sets(&data.sources, n, cfg.queries.seed, cfg.threads)?;
    let originals: HashMap<u64, &Tensor<f32>> = data.all.iter().map(|c| (c.id, &c.pixels)).collect();
    let settings = RetrievalSettings {
        nprobe: cfg.index.nprobe,
        realize: cfg.queries.realize,
        threads: cfg.threads,
    };
    let nprobe = matches!(index, VectorIndex::IvfPq(_)).then_some(cfg.index.nprobe);
    let run_sets = |budget: Option<&AttackBudget>| -> CliResult<Vec<QueryRecord>> {
        let mut records = Vec::new();
        for kind in QueryKind::ALL {
            records.extend(evaluate_queries(model, index, sets.get(kind), &originals, budget, &settings)?.0);
        }
        Ok(records)
    };
    let pairs = match comparator {
        Some(_) => make_comparator_pairs(&data.sources, cfg.queries.pairs, cfg.queries.seed, cfg.threads)?,
        None => Vec::new(),
    };
    let run_pairs = |budget: Option<&AttackBudget>| -> CliResult<Vec<PairRecord>> {
        match comparator {
            Some(c) => Ok(evaluate_comparator(c, &pairs, budget, cfg.queries.realize, cfg.threads)?),
            None => Ok(Vec::new()),
        }
    };
    let clean = run_sets(None)?;
    let clean_pairs = run_pairs(None)?;
    let base_config = json!({ "inputs": inputs, "config": cfg });
    let mut reports = Vec::new();
    if cfg.budgets.is_empty() {
        reports.push((
            "clean".to_string(),
            EvalReport::new(name, base_config.clone(), Some(index.describe()), nprobe, clean.clone(), clean_pairs.clone())?,
        ));
    }
    for budget in &cfg.budgets {
        let label = budget_label(budget);
        let mut records = clean.clone();
        records.extend(run_sets(Some(budget))?);
        let mut pair_records = clean_pairs.clone();
        pair_records.extend(run_pairs(Some(budget))?);
        let mut config = base_config.clone();
        config["budget"] = serde_json::to_value(budget)?;
        let report = EvalReport::new(format!("{name}@{label}"), config, Some(index.describe()), nprobe, records, pair_records)?;
        reports.push((label, report));
    }
    for (label, report) in &reports {
        report.save(out.join(format!("report-{label}.json")))?;
        for c in &report.retrieval {
            println!(
                "{:<28} {:<15} {:<8} R@1 {:.3}  R@100 {:.3}",
                report.name,
                c.query_kind.name(),
                if c.attacked { "attacked" } else { "clean" },
                c.recall_at_1,
                c.recall_at_100
            );
        }
        for c in &report.comparator {
            println!(
                "{:<28} comparator      {:<8} AP {:.3}  IoU {}",
                report.name,
                if c.attacked { "attacked" } else { "clean" },
                c.ap.mean,
                c.mean_iou.map_or_else(|| "-".into(), |v| format!("{v:.3}"))
            );
        }
    }
    let reports: Vec<EvalReport> = reports.into_iter().map(|(_, r)| r).collect();
    write_tables(out, &reports)
}

fn write_tables(out: &Path, reports: &[EvalReport]) -> CliResult {
    write_retrieval_csv(reports, fs::File::create(out.join("retrieval.csv"))?)?;
    write_fscore_csv(reports, fs::File::create(out.join("fscore.csv"))?)?;
    if reports.iter().any(|r| !r.pairs.is_empty()) {
        write_comparator_csv(reports, fs::File::create(out.join("comparator.csv"))?)?;
    }
    Ok(())
}

fn probe_curves<'a>(run: &str, report: &'a ProbeReport) -> Vec<(String, &'a TrainingCurve)> {
    vec![
        (format!("{run}/1-step"), &report.one_step),
        (format!("{run}/3-step"), &report.three_step),
    ]
}

/// Plot data: one row per (run, epoch).
fn write_curves_csv(path: &Path, curves: &[(String, &TrainingCurve)]) -> CliResult {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Runtime(e.to_string()))?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.6}"));
    let csv_err = |e: csv::Error| CliError::Runtime(e.to_string());
    w.write_record(["run", "epoch", "clean_loss", "robust_loss", "standard_r1", "adversarial_r1"])
        .map_err(csv_err)?;
    for (run, curve) in curves {
        for r in &curve.records {
            w.write_record([
                run.clone(),
                r.epoch.to_string(),
                format!("{:.6}", r.clean_loss),
                format!("{:.6}", r.robust_loss),
                opt(r.standard_recall_at_1),
                opt(r.adversarial_recall_at_1),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

enum Input {
    Report(Box<EvalReport>),
    Curve(TrainingCurve),
    Probe(Box<ProbeReport>),
}

fn read_input(path: &Path) -> CliResult<Input> {
    let text = fs::read_to_string(require(path)?)?;
    if let Ok(r) = EvalReport::from_json(&text) {
        return Ok(Input::Report(Box::new(r)));
    }
    if let Ok(p) = serde_json::from_str::<ProbeReport>(&text) {
        return Ok(Input::Probe(Box::new(p)));
    }
    if let Ok(c) = serde_json::from_str::<TrainingCurve>(&text) {
        return Ok(Input::Curve(c));
    }
    Err(CliError::Config(format!(
        "{} is not an evaluation report, training curve, or probe report",
        path.display()
    )))
}

fn run_report(out: &Path, inputs: &[PathBuf]) -> CliResult {
    let mut reports = Vec::new();
    let mut curves = Vec::new();
    let mut probes = Vec::new();
    for path in inputs {
        let stem = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
        match read_input(path)? {
            Input::Report(r) => reports.push(*r),
            Input::Curve(c) => curves.push((stem, c)),
            Input::Probe(p) => probes.push((stem, *p)),
        }
    }
    if !reports.is_empty() {
        write_tables(out, &reports)?;
    }
    let mut all: Vec<(String, &TrainingCurve)> = curves.iter().map(|(s, c)| (s.clone(), c)).collect();
    for (stem, p) in &probes {
        all.extend(probe_curves(stem, p));
    }
    if !all.is_empty() {
        write_curves_csv(&out.join("curves.csv"), &all)?;
    }
    println!(
        "merged {} reports and {} curves into {}",
        reports.len(),
        all.len(),
        out.display()
    );
    Ok(())
}
