//! Command-line front end. [`run`] parses arguments, resolves the run
//! configuration, executes one subcommand inside a run directory and maps
//! failures to exit codes: 0 success, 1 validation or usage error, 2
//! runtime failure.

use clap::{Parser, Subcommand};
use serde_json::json;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::data::sqi::sqi;
use crate::data::store::{self, ManifestRow};
use crate::data::synth::{generate_cohort, pretraining_dataset, to_dataset};
use crate::data::Dataset;
use crate::error::{HimaeError, Result};
use crate::eval::ablate::{median, run_grid, write_grid_csv, CellResult, GridAxis};
use crate::eval::bench::{run_generative_benchmark, write_benchmark_csv};
use crate::eval::tasks::{
    few_shot_curve, level_features, planted_task, resolution_sweep, stratified_subject_split, LabeledSet, ProbeSplit,
};
use crate::model::HimaeModel;
use crate::nn::InitPolicy;
use crate::profile::{efficiency_report, REPORT_SCHEMA_VERSION};
use crate::rng::{derive_seed, purpose};
use crate::train::{load_model, model_checkpoint, pretrain, sha256_hex, write_loss_csv, Checkpoint, Trainer};

pub const RUN_DIR_ENV: &str = "HIMAE_RUN_DIR";

#[derive(Debug, Parser)]
#[command(name = "himae", version, about = "Hierarchical masked autoencoder toolkit")]
pub struct Cli {
    /// Run configuration (TOML, or JSON with a .json extension).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override a configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Seed for every random draw.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Exact output directory; defaults to `$HIMAE_RUN_DIR/<command>-seed<N>`.
    #[arg(long, global = true, value_name = "DIR")]
    pub run_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct GridArgs {
    /// Grid axis `key=v1,v2,...`; repeatable.
    #[arg(long = "grid", value_name = "AXIS")]
    pub grid: Vec<String>,
    /// Seeds per cell; defaults to the run seed.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort and store its preprocessed windows.
    Synth,
    /// Score raw synthetic windows with the signal-quality index.
    Sqi,
    /// Masked-autoencoder pretraining.
    Pretrain {
        /// Continue from a trainer checkpoint.
        #[arg(long, value_name = "PATH")]
        resume: Option<PathBuf>,
    },
    /// Reconstruction benchmark on held-out windows.
    GenerateBench,
    /// Per-level linear probes on the planted tasks.
    Probe,
    /// Train one model per grid cell and seed.
    Sweep(GridArgs),
    /// Probe AUROC as a function of labelled examples per class.
    Fewshot,
    /// Variant ablation; extra axes may be added with --grid.
    Ablate(GridArgs),
    /// Parameters, FLOPs, memory and latency.
    Profile {
        /// Skip timing.
        #[arg(long)]
        no_latency: bool,
    },
    /// Summarize a checkpoint file.
    InspectCheckpoint {
        path: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Sqi => "sqi",
            Command::Pretrain { .. } => "pretrain",
            Command::GenerateBench => "generate-bench",
            Command::Probe => "probe",
            Command::Sweep(_) => "sweep",
            Command::Fewshot => "fewshot",
            Command::Ablate(_) => "ablate",
            Command::Profile { .. } => "profile",
            Command::InspectCheckpoint { .. } => "inspect-checkpoint",
        }
    }
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

/// Configuration after the file, `--set` overrides and `--seed`.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&cli.overrides)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run_dir(cli: &Cli, cfg: &RunConfig) -> PathBuf {
    cli.run_dir.clone().unwrap_or_else(|| {
        let root = std::env::var_os(RUN_DIR_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
        root.join(format!("{}-seed{}", cli.command.name(), cfg.seed))
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Runs the parsed command; returns the run directory.
pub fn execute(cli: &Cli) -> Result<PathBuf> {
    let cfg = resolve_config(cli)?;
    let dir = run_dir(cli, &cfg);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    let results = match &cli.command {
        Command::Synth => cmd_synth(&cfg, &dir)?,
        Command::Sqi => cmd_sqi(&cfg, &dir)?,
        Command::Pretrain { resume } => cmd_pretrain(&cfg, &dir, resume.as_deref())?,
        Command::GenerateBench => cmd_bench(&cfg, &dir)?,
        Command::Probe => cmd_probe(&cfg, &dir)?,
        Command::Sweep(g) => cmd_grid(&cfg, &dir, g, false)?,
        Command::Fewshot => cmd_fewshot(&cfg, &dir)?,
        Command::Ablate(g) => cmd_grid(&cfg, &dir, g, true)?,
        Command::Profile { no_latency } => cmd_profile(&cfg, &dir, !no_latency)?,
        Command::InspectCheckpoint { path } => cmd_inspect(path)?,
    };
    write_json(
        &dir.join("results.json"),
        &json!({
            "schema_version": REPORT_SCHEMA_VERSION,
            "command": cli.command.name(),
            "seed": cfg.seed,
            "results": results,
        }),
    )?;
    Ok(dir)
}

fn cmd_synth(cfg: &RunConfig, dir: &Path) -> Result<serde_json::Value> {
    let data = pretraining_dataset(&cfg.synth, cfg.seed)?;
    store::write_shard(&dir.join("windows.hmws"), data.windows())?;
    let mut w = csv::Writer::from_path(dir.join("windows.csv"))?;
    w.write_record(["window_id", "subject_id"])?;
    for (i, s) in data.subjects().iter().enumerate() {
        w.write_record([i.to_string(), s.to_string()])?;
    }
    w.flush()?;
    Ok(json!({ "windows": data.len(), "window_len": data.window_len(), "subjects": cfg.synth.subjects }))
}

fn cmd_sqi(cfg: &RunConfig, dir: &Path) -> Result<serde_json::Value> {
    let cohort = generate_cohort(&cfg.synth, cfg.seed)?;
    let mut rows = Vec::with_capacity(cohort.len());
    let (mut accepted, mut artifact_accepted, mut artifacts) = (0, 0, 0);
    let mut stages = std::collections::BTreeMap::<String, usize>::new();
    for (i, w) in cohort.iter().enumerate() {
        let r = sqi(&w.samples, &cfg.sqi)?;
        accepted += usize::from(r.accepted);
        artifacts += usize::from(w.artifact);
        artifact_accepted += usize::from(w.artifact && r.accepted);
        if let Some(s) = r.reject_stage {
            *stages.entry(s.name().to_string()).or_default() += 1;
        }
        rows.push(ManifestRow::new(i as u64, w.subject, &r));
    }
    store::write_manifest(&dir.join("sqi_manifest.csv"), &rows)?;
    Ok(json!({
        "windows": cohort.len(),
        "accepted": accepted,
        "artifact_windows": artifacts,
        "artifact_windows_accepted": artifact_accepted,
        "rejected_by_stage": stages,
    }))
}

fn cmd_pretrain(cfg: &RunConfig, dir: &Path, resume: Option<&Path>) -> Result<serde_json::Value> {
    let data = pretraining_dataset(&cfg.synth, cfg.seed)?;
    let (trainer, split) = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let split = crate::data::subject_split(data.subjects(), cfg.train.val_fraction, cfg.seed)?;
            let mut t = Trainer::resume(&ck, data.subset(&split.train)?, data.subset(&split.val)?)?;
            t.run(None)?;
            (t, split)
        }
        None => {
            let out = pretrain(cfg.model.clone(), cfg.train.clone(), &data, cfg.seed)?;
            (out.trainer, out.split)
        }
    };
    let state = trainer.state();
    write_loss_csv(&state.history, &dir.join("loss.csv"))?;
    write_json(&dir.join("split.json"), &serde_json::to_value(&split)?)?;
    let trainer_hash = trainer.checkpoint()?.save(&dir.join("trainer.ckpt"))?;
    let model_hash = model_checkpoint(&trainer.best_model()).save(&dir.join("model.ckpt"))?;
    Ok(json!({
        "steps": state.step,
        "best_val_mse": state.best_val,
        "best_step": state.best_step,
        "stopped_early": state.stopped_early,
        "trainer_checkpoint_sha256": trainer_hash,
        "model_checkpoint_sha256": model_hash,
        "params": trainer.model().count_parameters(),
    }))
}

/// The encoder named by `eval.checkpoint`, or a fresh one from the seed.
fn eval_model(cfg: &RunConfig) -> Result<HimaeModel> {
    match &cfg.eval.checkpoint {
        Some(p) => load_model(&Checkpoint::load(Path::new(p))?),
        None => HimaeModel::new(cfg.model.clone(), &InitPolicy::new(derive_seed(cfg.seed, purpose::INIT, 0))),
    }
}

/// Windows from subjects unseen in pretraining (a separate synthesis seed).
fn held_out(cfg: &RunConfig, n: usize) -> Result<Dataset> {
    let mut synth = cfg.synth.clone();
    synth.subjects = n.div_ceil(synth.windows_per_subject).max(2);
    let cohort = generate_cohort(&synth, derive_seed(cfg.seed, purpose::SYNTH, 1))?;
    let data = to_dataset(&cohort, synth.fs, [0.5, 8.0], 2)?;
    let idx: Vec<usize> = (0..n.min(data.len())).collect();
    data.subset(&idx)
}

fn cmd_bench(cfg: &RunConfig, dir: &Path) -> Result<serde_json::Value> {
    let model = eval_model(cfg)?;
    let data = held_out(cfg, cfg.eval.bench_windows)?;
    let rows = run_generative_benchmark(&model, &data, &cfg.bench, cfg.seed)?;
    write_benchmark_csv(&rows, &dir.join("generative.csv"))?;
    Ok(json!({ "windows": data.len(), "rows": rows }))
}

fn task_split(cfg: &RunConfig, set: &LabeledSet) -> Result<ProbeSplit> {
    stratified_subject_split(set.data.subjects(), &set.labels, cfg.eval.test_fraction, cfg.seed)
}

fn cmd_probe(cfg: &RunConfig, dir: &Path) -> Result<serde_json::Value> {
    let model = eval_model(cfg)?;
    let mut w = csv::Writer::from_path(dir.join("probe.csv"))?;
    w.write_record(["task", "level", "auroc", "best_level", "split_hash"])?;
    let mut out = Vec::new();
    for &task in &cfg.eval.tasks {
        let set = planted_task(task, &cfg.task, cfg.seed)?;
        let split = task_split(cfg, &set)?;
        set.write_manifest(&dir.join(format!("{}_manifest.csv", task.name())))?;
        write_json(&dir.join(format!("{}_split.json", task.name())), &serde_json::to_value(&split)?)?;
        let r = resolution_sweep(&model, &set, &split, &cfg.probe, cfg.eval.mean_pool)?;
        for &(level, auroc) in &r.curve {
            w.write_record([
                task.name().to_string(),
                level.to_string(),
                auroc.to_string(),
                r.best_level.to_string(),
                r.split_hash.clone(),
            ])?;
        }
        out.push(json!({ "task": task.name(), "sweep": r }));
    }
    w.flush()?;
    Ok(json!(out))
}

fn cmd_fewshot(cfg: &RunConfig, dir: &Path) -> Result<serde_json::Value> {
    let model = eval_model(cfg)?;
    let level = cfg.eval.level.unwrap_or(model.config().depth());
    let mut w = csv::Writer::from_path(dir.join("fewshot.csv"))?;
    w.write_record(["task", "level", "k", "mean_auroc", "sd_auroc"])?;
    let mut out = Vec::new();
    for &task in &cfg.eval.tasks {
        let set = planted_task(task, &cfg.task, cfg.seed)?;
        let split = task_split(cfg, &set)?;
        let feats = level_features(&model, &set.data, level, cfg.eval.mean_pool, 32)?;
        let curve = few_shot_curve(
            &feats,
            &set,
            &split,
            &cfg.eval.few_shot_k,
            cfg.eval.few_shot_repeats,
            &cfg.probe,
            cfg.seed,
        )?;
        for p in &curve.points {
            w.write_record([
                task.name().to_string(),
                level.to_string(),
                p.k.to_string(),
                p.mean.to_string(),
                p.sd.to_string(),
            ])?;
        }
        out.push(json!({ "task": task.name(), "level": level, "curve": curve }));
    }
    w.flush()?;
    Ok(json!(out))
}

fn cmd_grid(cfg: &RunConfig, dir: &Path, args: &GridArgs, variants: bool) -> Result<serde_json::Value> {
    let mut axes: Vec<GridAxis> = Vec::new();
    if variants && !args.grid.iter().any(|g| g.starts_with("variant=") || g.starts_with("model.variant=")) {
        axes.push("variant=full,no-skip,plain-cnn".parse()?);
    }
    for g in &args.grid {
        axes.push(g.parse()?);
    }
    if axes.is_empty() {
        return Err(HimaeError::Config("sweep needs at least one --grid axis".into()));
    }
    let seeds = if args.seeds.is_empty() { vec![cfg.seed] } else { args.seeds.clone() };
    let report = |r: &CellResult| {
        let s: Vec<String> = r.settings.iter().map(|(k, v)| format!("{k}={v}")).collect();
        match (&r.skipped, r.val_mse) {
            (Some(why), _) => eprintln!("cell {} seed {} [{}] skipped: {why}", r.cell, r.seed, s.join(" ")),
            (None, Some(v)) => eprintln!("cell {} seed {} [{}] val_mse {v:.5}", r.cell, r.seed, s.join(" ")),
            _ => {}
        }
    };
    let results = run_grid(cfg, &axes, &seeds, args.workers, &report)?;
    write_grid_csv(&results, &dir.join("grid.csv"))?;
    let cells = results.iter().map(|r| r.cell).max().map_or(0, |m| m + 1);
    let summary: Vec<serde_json::Value> = (0..cells)
        .map(|c| {
            let rs: Vec<&CellResult> = results.iter().filter(|r| r.cell == c).collect();
            let vals: Vec<f64> = rs.iter().filter_map(|r| r.val_mse).collect();
            json!({
                "cell": c,
                "settings": rs[0].settings,
                "median_val_mse": median(&vals),
                "runs": vals.len(),
                "skipped": rs[0].skipped,
            })
        })
        .collect();
    Ok(json!({ "seeds": seeds, "cells": summary }))
}

fn cmd_profile(cfg: &RunConfig, dir: &Path, latency: bool) -> Result<serde_json::Value> {
    let model = eval_model(cfg)?;
    let p = &cfg.profile;
    let report = efficiency_report(&model, latency.then_some((p.batch, p.repeats, p.warmup)))?;
    let value = serde_json::to_value(&report)?;
    write_json(&dir.join("efficiency.json"), &value)?;
    Ok(value)
}

fn cmd_inspect(path: &Path) -> Result<serde_json::Value> {
    let bytes = std::fs::read(path)?;
    let ck = Checkpoint::from_bytes(&bytes)?;
    let tensors: Vec<serde_json::Value> = ck
        .tensors
        .iter()
        .map(|(n, t)| json!({ "name": n, "shape": t.shape().dims() }))
        .collect();
    let summary = json!({
        "path": path.display().to_string(),
        "sha256": sha256_hex(&bytes),
        "bytes": bytes.len(),
        "meta": ck.meta,
        "tensors": tensors,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(summary)
}
