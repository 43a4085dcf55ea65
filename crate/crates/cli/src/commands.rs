//! The five subcommands. Each resolves a config, does its work through the
//! engine crate, and leaves a manifest next to its outputs so a rerun can be
//! checked byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::json;

use selfcf_core::data::{
    ingest, kcore_filter, read_canonical, remap_and_split, write_canonical, FieldOrder,
    InteractionDataset,
};
use selfcf_core::encoders::checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
use selfcf_core::encoders::full_tables;
use selfcf_core::eval::{evaluate, EvalPhase, MetricsReport};
use selfcf_core::graph::build_normalized_adjacency;
use selfcf_core::selfcf::{fit, FitResult, LossKind, Objective, PredictorMode};

use crate::config::{apply_axis, Framework, RunConfig};
use crate::CommonArgs;

fn load_config(args: &CommonArgs) -> Result<RunConfig> {
    RunConfig::load(
        &args.config,
        &args.set,
        args.seed,
        args.out.as_deref(),
    )
}

fn write_manifest(
    dir: &Path,
    command: &str,
    config: &RunConfig,
    parameter_count: Option<usize>,
) -> Result<()> {
    let mut manifest = json!({
        "command": command,
        "config_sha256": config.sha256(),
        "seed": config.train.seed,
        "versions": {
            "engine": env!("CARGO_PKG_VERSION"),
            "checkpoint_format": CHECKPOINT_VERSION,
        },
    });
    if let Some(n) = parameter_count {
        manifest["parameter_count"] = json!(n);
    }
    let path = dir.join("manifest.json");
    fs::write(&path, format!("{:#}\n", manifest))
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn prepare(args: &CommonArgs) -> Result<()> {
    let config = load_config(args)?;
    if config.dataset.raw.is_empty() {
        bail!("dataset.raw is empty; point it at the raw interaction file");
    }
    let order = FieldOrder::parse(&config.dataset.fields)?;
    let mut records = ingest(Path::new(&config.dataset.raw), &order)?;
    if config.dataset.kcore > 0 {
        records = kcore_filter(&records, config.dataset.kcore)?;
    }
    let [train, val, test] = config.dataset.split;
    let dataset = remap_and_split(&records, (train, val, test))?;

    let dir = PathBuf::from(&config.dataset.prepared);
    write_canonical(&dataset, &dir)?;

    let interactions = dataset.train.len() + dataset.validation.len() + dataset.test.len();
    let sparsity_percent = dataset.sparsity() * 100.0;
    let stats = json!({
        "users": dataset.num_users,
        "items": dataset.num_items,
        "interactions": interactions,
        "sparsity_percent": sparsity_percent,
    });
    fs::write(dir.join("stats.json"), format!("{:#}\n", stats))
        .with_context(|| format!("writing stats under {}", dir.display()))?;
    write_manifest(&dir, "prepare", &config, None)?;

    println!(
        "{} users, {} items, {} interactions, sparsity {:.4}%",
        dataset.num_users, dataset.num_items, interactions, sparsity_percent
    );
    Ok(())
}

struct TrainOutcome {
    fit: FitResult,
    report: MetricsReport,
    parameter_count: usize,
}

/// Full train + test-evaluate pass for one objective. The returned report
/// carries the seed and config hash of the run that produced it.
fn run_objective(
    config: &RunConfig,
    dataset: &InteractionDataset,
    objective: &Objective,
) -> Result<TrainOutcome> {
    let model = config.model_spec();
    let result = fit(dataset, &model, objective, &config.train_config())?;

    let adjacency = if result.params.layers > 0 {
        Some(build_normalized_adjacency(dataset)?)
    } else {
        None
    };
    let (user_full, item_full) = full_tables(&result.params, adjacency.as_ref())?;
    let mut report = evaluate(
        dataset,
        &user_full,
        &item_full,
        result.predictor.as_ref(),
        &config.eval.k,
        EvalPhase::Test,
        &config.eval.bucket_edges,
    )?;
    report.seed = Some(config.train.seed);
    report.config_hash = Some(config.sha256());

    let parameter_count = result.params.embedding_param_count()
        + result.predictor.as_ref().map_or(0, |p| p.param_count());
    Ok(TrainOutcome {
        fit: result,
        report,
        parameter_count,
    })
}

fn load_prepared(config: &RunConfig) -> Result<InteractionDataset> {
    let dir = PathBuf::from(&config.dataset.prepared);
    read_canonical(&dir)
        .with_context(|| format!("loading prepared dataset from {}", dir.display()))
}

/// Checkpoint, epoch log, reports, resolved config, manifest.
fn write_run(dir: &Path, config: &RunConfig, outcome: &TrainOutcome, command: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    save_checkpoint(
        dir.join("checkpoint.bin"),
        &outcome.fit.params,
        outcome.fit.predictor.as_ref(),
    )?;

    let mut log = String::new();
    for record in &outcome.fit.log {
        log.push_str(&serde_json::to_string(record)?);
        log.push('\n');
    }
    fs::write(dir.join("train_log.jsonl"), log)?;
    fs::write(
        dir.join("report.json"),
        format!("{}\n", serde_json::to_string_pretty(&outcome.report)?),
    )?;
    fs::write(dir.join("report.csv"), outcome.report.to_csv())?;
    fs::write(dir.join("config.toml"), config.canonical_toml())?;
    write_manifest(dir, command, config, Some(outcome.parameter_count))?;
    Ok(())
}

fn print_report(report: &MetricsReport) {
    for &k in &report.k_values {
        println!(
            "test recall@{k} {:.4}  ndcg@{k} {:.4}",
            report.recall[&k], report.ndcg[&k]
        );
    }
}

pub fn train(args: &CommonArgs) -> Result<()> {
    let config = load_config(args)?;
    let objective = config.objective()?;
    let dataset = load_prepared(&config)?;
    let outcome = run_objective(&config, &dataset, &objective)?;
    let dir = PathBuf::from(&config.output.dir);
    write_run(&dir, &config, &outcome, "train")?;

    println!(
        "trained {} epochs, best epoch {} (validation recall@{} {:.4}), {} parameters",
        outcome.fit.log.len(),
        outcome.fit.best_epoch,
        config.eval.validation_k,
        outcome.fit.best_val_recall,
        outcome.parameter_count
    );
    print_report(&outcome.report);
    Ok(())
}

pub fn evaluate_cmd(args: &CommonArgs) -> Result<()> {
    let config = load_config(args)?;
    let checkpoint = if config.eval.checkpoint.is_empty() {
        PathBuf::from(&config.output.dir).join("checkpoint.bin")
    } else {
        PathBuf::from(&config.eval.checkpoint)
    };
    let (params, predictor) = load_checkpoint(&checkpoint)?;
    let dataset = load_prepared(&config)?;
    if params.num_users() != dataset.num_users || params.num_items() != dataset.num_items {
        bail!(
            "checkpoint is {}x{} but the prepared dataset is {}x{}",
            params.num_users(),
            params.num_items(),
            dataset.num_users,
            dataset.num_items
        );
    }

    let adjacency = if params.layers > 0 {
        Some(build_normalized_adjacency(&dataset)?)
    } else {
        None
    };
    let (user_full, item_full) = full_tables(&params, adjacency.as_ref())?;
    let mut report = evaluate(
        &dataset,
        &user_full,
        &item_full,
        predictor.as_ref(),
        &config.eval.k,
        EvalPhase::Test,
        &config.eval.bucket_edges,
    )?;
    report.seed = Some(config.train.seed);
    report.config_hash = Some(config.sha256());

    let dir = PathBuf::from(&config.output.dir);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(
        dir.join("report.json"),
        format!("{}\n", serde_json::to_string_pretty(&report)?),
    )?;
    fs::write(dir.join("report.csv"), report.to_csv())?;
    write_manifest(&dir, "evaluate", &config, None)?;

    print_report(&report);
    Ok(())
}

fn metrics_csv_header(k_list: &[usize], lead: &str) -> String {
    let mut header = String::from(lead);
    for &k in k_list {
        header.push_str(&format!(",recall@{k}"));
    }
    for &k in k_list {
        header.push_str(&format!(",ndcg@{k}"));
    }
    header.push_str(",best_epoch,val_recall\n");
    header
}

fn metrics_csv_row(lead: &str, k_list: &[usize], outcome: &TrainOutcome) -> String {
    let mut row = String::from(lead);
    for &k in k_list {
        row.push_str(&format!(",{}", outcome.report.recall[&k]));
    }
    for &k in k_list {
        row.push_str(&format!(",{}", outcome.report.ndcg[&k]));
    }
    row.push_str(&format!(
        ",{},{}\n",
        outcome.fit.best_epoch, outcome.fit.best_val_recall
    ));
    row
}

pub fn sweep(args: &CommonArgs) -> Result<()> {
    let config = load_config(args)?;
    if config.sweep.axis.is_empty() {
        bail!("sweep.axis is empty; name the field to vary");
    }
    if config.sweep.values.is_empty() {
        bail!("sweep.values is empty");
    }
    let dataset = load_prepared(&config)?;
    let base = PathBuf::from(&config.output.dir);
    fs::create_dir_all(&base).with_context(|| format!("creating {}", base.display()))?;

    let axis = config.sweep.axis.clone();
    let mut csv = metrics_csv_header(&config.eval.k, "axis,value");
    for &value in &config.sweep.values {
        let mut point = config.clone();
        apply_axis(&mut point, &axis, value)?;
        point.output.dir = base
            .join(format!("{}_{}", axis.replace('.', "_"), value))
            .to_string_lossy()
            .into_owned();

        let objective = point.objective()?;
        let outcome = run_objective(&point, &dataset, &objective)?;
        write_run(Path::new(&point.output.dir), &point, &outcome, "train")?;

        csv.push_str(&metrics_csv_row(
            &format!("{axis},{value}"),
            &config.eval.k,
            &outcome,
        ));
        let k = config.eval.k[0];
        println!(
            "{axis}={value}: test recall@{k} {:.4}, best epoch {}",
            outcome.report.recall[&k], outcome.fit.best_epoch
        );
    }

    fs::write(base.join("sweep.csv"), csv)?;
    write_manifest(&base, "sweep", &config, None)?;
    Ok(())
}

/// The fixed ablation grid: head, loss, and stop-gradient variants, one row
/// each. The `[ablation]` config flags are ignored here; this command always
/// runs the whole table.
const ABLATION_VARIANTS: [(&str, PredictorMode, LossKind, bool); 7] = [
    ("baseline", PredictorMode::Linear, LossKind::Cosine, true),
    ("no_predictor", PredictorMode::Identity, LossKind::Cosine, true),
    (
        "fixed_random_predictor",
        PredictorMode::FixedRandom,
        LossKind::Cosine,
        true,
    ),
    ("2layer_predictor", PredictorMode::TwoLayer, LossKind::Cosine, true),
    ("cross_entropy", PredictorMode::Linear, LossKind::CrossEntropy, true),
    ("no_sg_with_pred", PredictorMode::Linear, LossKind::Cosine, false),
    ("no_sg_no_pred", PredictorMode::Identity, LossKind::Cosine, false),
];

pub fn ablate(args: &CommonArgs) -> Result<()> {
    let config = load_config(args)?;
    if config.model.framework == Framework::SupervisedBpr {
        bail!("ablate varies the self-supervised objective; pick a selfcf framework");
    }
    let perturbation = config.perturbation()?;
    let dataset = load_prepared(&config)?;
    let base = PathBuf::from(&config.output.dir);
    fs::create_dir_all(&base).with_context(|| format!("creating {}", base.display()))?;

    let mut csv = metrics_csv_header(&config.eval.k, "variant");
    for (name, predictor, loss, stop_gradient) in ABLATION_VARIANTS {
        let objective = Objective::SelfSupervised {
            perturbation,
            predictor,
            loss,
            stop_gradient,
        };
        let mut variant = config.clone();
        variant.output.dir = base.join(name).to_string_lossy().into_owned();
        let outcome = run_objective(&variant, &dataset, &objective)?;
        write_run(Path::new(&variant.output.dir), &variant, &outcome, "ablate")?;

        csv.push_str(&metrics_csv_row(name, &config.eval.k, &outcome));
        let k = config.eval.k[0];
        println!(
            "{name}: test recall@{k} {:.4}, best epoch {}",
            outcome.report.recall[&k], outcome.fit.best_epoch
        );
    }

    fs::write(base.join("ablation.csv"), csv)?;
    write_manifest(&base, "ablate", &config, None)?;
    Ok(())
}
