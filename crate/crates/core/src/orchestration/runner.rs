//! Executing recipes inside run directories.
//!
//! `{runs_dir}/{run_id}/` holds `config.json`, the stage log
//! `stages.jsonl` (one line per executed stage) and each stage's outputs.
//! The run id is `{recipe}-{first 12 hex of the config hash}`, so running
//! the same recipe and config again lands in the same directory and skips
//! stages already in the log.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::Utc;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::ingestion::{DatasetManifest, IngestError, MANIFEST_FILE};
use crate::metrics::Task;
use crate::modeling::{self, ModelCheckpoint, TensorDataset, TrainConfig};
use crate::preprocess::{
    self, balance_classes, labeled_rows, read_labeled, samples_for, split_dataset, write_labeled, HouseholdRecord,
    ImageSample, IncomeGroupTable, InputMode, PolicyMode, PovertyPolicy, PreprocessOptions, SplitAssignment, SplitSpec,
};
use crate::reporting::{self, PlotMeta};

use super::config::PipelineConfig;
use super::recipe::{self, config_hash, ExperimentRecipe, Operation};
use super::registry::{Registry, RunRegistryEntry, RunStatus, StageFailure, StageTiming};
use super::OrchestrationError;

pub const STAGE_LOG: &str = "stages.jsonl";
pub const LOCK_FILE: &str = "run.lock";
const REFERENCE_POOLED_IMAGES: usize = 2562;

/// One executed stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub index: usize,
    pub name: String,
    pub module: String,
    pub operation: String,
    pub seed: u64,
    pub wall_time_s: f64,
    pub outputs: Vec<String>,
}

/// What `train` wrote about its datasets; `evaluate` reloads the
/// validation samples from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub task: Task,
    pub input: InputMode,
    pub n_samples: usize,
    pub n_train: usize,
    pub n_valid: usize,
    pub positives_before_balance: Option<usize>,
    pub valid: Vec<ImageSample>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Stop after this many stages have executed in this invocation.
    pub stop_after: Option<usize>,
}

pub fn run_id(recipe: &ExperimentRecipe, config: &PipelineConfig) -> String {
    format!("{}-{}", recipe.name, &config_hash(recipe, config)[..12])
}

pub fn read_stage_log(run_dir: &Path) -> Result<Vec<StageRecord>, OrchestrationError> {
    let path = run_dir.join(STAGE_LOG);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(OrchestrationError::io(&path, e)),
    };
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| OrchestrationError::Io {
                path: path.display().to_string(),
                message: format!("bad stage record: {e}"),
            })
        })
        .collect()
}

fn append_stage_log(run_dir: &Path, record: &StageRecord) -> Result<(), OrchestrationError> {
    let path = run_dir.join(STAGE_LOG);
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| OrchestrationError::io(&path, e))?;
    let mut line = serde_json::to_string(record).expect("stage records serialize");
    line.push('\n');
    f.write_all(line.as_bytes())
        .map_err(|e| OrchestrationError::io(&path, e))
}

/// Exclusive hold on a run directory, released on drop.
struct RunLock {
    _file: File,
}

impl RunLock {
    fn acquire(run_dir: &Path, run_id: &str) -> Result<Self, OrchestrationError> {
        let path = run_dir.join(LOCK_FILE);
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(|e| OrchestrationError::io(&path, e))?;
        match file.try_lock() {
            Ok(()) => Ok(Self { _file: file }),
            Err(std::fs::TryLockError::WouldBlock) => Err(OrchestrationError::RunLocked(run_id.to_string())),
            Err(std::fs::TryLockError::Error(e)) => Err(OrchestrationError::io(&path, e)),
        }
    }
}

#[derive(Serialize)]
struct RunConfigFile<'a> {
    run_id: &'a str,
    config_hash: &'a str,
    recipe: &'a ExperimentRecipe,
    config: &'a PipelineConfig,
}

struct StageContext<'a> {
    config: &'a PipelineConfig,
    data_root: PathBuf,
    run_dir: &'a Path,
    run_id: &'a str,
    config_hash: &'a str,
    seed: u64,
}

fn is_data_unavailable(e: &Error) -> bool {
    matches!(
        e,
        Error::Ingest(IngestError::Io { .. } | IngestError::Incomplete(_) | IngestError::Manifest(_))
    )
}

fn execute(op: Operation, ctx: &StageContext) -> Result<(), Error> {
    match op {
        Operation::VerifyManifest => {
            let manifest = DatasetManifest::read(&ctx.data_root.join(MANIFEST_FILE))?;
            manifest.verify(&ctx.data_root)?;
            log::info!(
                "manifest {} verified ({} households)",
                manifest.hash(),
                manifest.rows.len()
            );
            Ok(())
        }
        Operation::Prepare { policy, mosaics } => stage_prepare(ctx, policy, mosaics),
        Operation::Train { task, input } => stage_train(ctx, task, input),
        Operation::Evaluate => stage_evaluate(ctx),
        Operation::Scatter => {
            let report = reporting::load_report(&ctx.run_dir.join(recipe::REPORT))?;
            let meta = plot_meta(ctx, "prediction vs target");
            reporting::render_scatter(&report, &ctx.run_dir.join(recipe::SCATTER), &meta)?;
            Ok(())
        }
        Operation::Confusion { normalized } => {
            let report = reporting::load_report(&ctx.run_dir.join(recipe::REPORT))?;
            let cm = report.confusion.ok_or(reporting::ReportError::MissingConfusion)?;
            let (file, title) = if normalized {
                (recipe::CONFUSION_NORMALIZED, "confusion matrix (row normalized)")
            } else {
                (recipe::CONFUSION_RAW, "confusion matrix")
            };
            reporting::render_confusion(&cm, normalized, &ctx.run_dir.join(file), &plot_meta(ctx, title))?;
            Ok(())
        }
    }
}

fn plot_meta(ctx: &StageContext, title: &str) -> PlotMeta {
    PlotMeta {
        run_id: ctx.run_id.to_string(),
        config_hash: ctx.config_hash.to_string(),
        title: title.to_string(),
    }
}

pub fn income_table(config: &PipelineConfig) -> Result<IncomeGroupTable, Error> {
    Ok(match &config.preprocess.income_table {
        Some(p) => IncomeGroupTable::load(p)?,
        None => IncomeGroupTable::bundled(),
    })
}

pub fn poverty_policy(config: &PipelineConfig, mode: PolicyMode) -> PovertyPolicy {
    match mode {
        PolicyMode::Uniform => PovertyPolicy::uniform_line(config.preprocess.uniform_daily_line_usd),
        PolicyMode::ByIncomeGroup => PovertyPolicy::by_income_group(),
    }
}

fn stage_prepare(ctx: &StageContext, policy: PolicyMode, mosaics: bool) -> Result<(), Error> {
    let manifest = DatasetManifest::read(&ctx.data_root.join(MANIFEST_FILE))?;
    let options = PreprocessOptions {
        policy: poverty_policy(ctx.config, policy),
        cap_usd: ctx.config.preprocess.cap_usd,
        seed: ctx.seed,
        mosaic: preprocess::MosaicSpec::with_tile_px(ctx.config.preprocess.tile_px),
        write_mosaics: mosaics,
    };
    let prepared = preprocess::prepare(&manifest, &ctx.data_root, &income_table(ctx.config)?, &options)?;
    log::info!(
        "{} -> {} households after the outlier filter",
        prepared.households_in,
        prepared.records.len()
    );
    let rows = labeled_rows(&manifest, &prepared.records, &prepared.splits);
    write_labeled(&ctx.run_dir.join(recipe::LABELED), &rows)?;
    Ok(())
}

fn train_config(config: &PipelineConfig, task: Task, input: InputMode, seed: u64) -> TrainConfig {
    let t = &config.train;
    let mut c = TrainConfig::new(task, input);
    c.backbone_id = t.backbone_id.clone();
    c.pretrained = t.pretrained.clone();
    c.input_px = t.input_px;
    c.epochs = t.epochs;
    c.batch_size = t.batch_size;
    c.learning_rate = t.learning_rate;
    c.weight_decay = t.weight_decay;
    c.seed = seed;
    c
}

/// Train and validation samples; `positives` counts label-1 samples
/// before undersampling (classification only).
#[derive(Debug, Clone)]
pub struct SampleSplit {
    pub train: Vec<ImageSample>,
    pub valid: Vec<ImageSample>,
    pub positives: Option<usize>,
}

/// Regression splits households with the stored assignment; classification
/// balances individual samples, then splits them.
pub fn build_split(
    records: &[(HouseholdRecord, Option<SplitAssignment>)],
    task: Task,
    input: InputMode,
    data_root: &Path,
    seed: u64,
) -> Result<SampleSplit, Error> {
    match task {
        Task::Regression => {
            let pick = |want: SplitAssignment| -> Vec<HouseholdRecord> {
                records
                    .iter()
                    .filter(|(_, s)| *s == Some(want))
                    .map(|(r, _)| r.clone())
                    .collect()
            };
            let train = samples_for(&pick(SplitAssignment::Train), input, data_root);
            let valid = samples_for(&pick(SplitAssignment::Valid), input, data_root);
            Ok(SampleSplit {
                train,
                valid,
                positives: None,
            })
        }
        Task::Classification => {
            let all: Vec<HouseholdRecord> = records.iter().map(|(r, _)| r.clone()).collect();
            let samples = samples_for(&all, input, data_root);
            let positives = samples.iter().filter(|s| s.poverty_label == Some(1)).count();
            log::info!("{positives} positive samples among {}", samples.len());
            // The reference pool was 2562 images, which matches neither the
            // category total (2452) nor that plus mosaics (2862). Report ours.
            if input == InputMode::Pooled && samples.len() != REFERENCE_POOLED_IMAGES {
                log::warn!(
                    "pooled classification universe has {} images, reference count is {REFERENCE_POOLED_IMAGES}",
                    samples.len()
                );
            }
            let balanced = balance_classes(&samples, seed)?;
            let (train, valid) = split_dataset(&balanced, &SplitSpec::new(seed))?;
            Ok(SampleSplit {
                train,
                valid,
                positives: Some(positives),
            })
        }
    }
}

fn stage_train(ctx: &StageContext, task: Task, input: InputMode) -> Result<(), Error> {
    let records = read_labeled(&ctx.run_dir.join(recipe::LABELED), &ctx.data_root)?;
    let SampleSplit {
        train: train_s,
        valid: valid_s,
        positives,
    } = build_split(&records, task, input, &ctx.data_root, ctx.seed)?;
    let config = train_config(ctx.config, task, input, ctx.seed);
    config.validate()?;
    log::info!(
        "training {task} on {input}: {} train / {} valid samples",
        train_s.len(),
        valid_s.len()
    );
    let train = TensorDataset::from_samples(&train_s, task, config.input_px)?;
    let valid = TensorDataset::from_samples(&valid_s, task, config.input_px)?;
    let (checkpoint, logs) = match task {
        Task::Regression => modeling::train_regressor(&train, &valid, &config)?,
        Task::Classification => modeling::train_classifier(&train, &valid, &config, ctx.config.train.beta)?,
    };
    let mut epochs = String::new();
    for l in &logs {
        epochs.push_str(&serde_json::to_string(l).expect("epoch logs serialize"));
        epochs.push('\n');
    }
    let epochs_path = ctx.run_dir.join(recipe::EPOCHS);
    fs::write(&epochs_path, epochs).map_err(|e| Error::io(&epochs_path, e))?;
    checkpoint.save(&ctx.run_dir.join(recipe::CHECKPOINT))?;
    let summary = SplitSummary {
        task,
        input,
        n_samples: train_s.len() + valid_s.len(),
        n_train: train_s.len(),
        n_valid: valid_s.len(),
        positives_before_balance: positives,
        valid: valid_s,
    };
    let split_path = ctx.run_dir.join(recipe::SPLIT);
    fs::write(
        &split_path,
        serde_json::to_string_pretty(&summary).expect("split serializes"),
    )
    .map_err(|e| Error::io(&split_path, e))?;
    Ok(())
}

pub fn read_split(run_dir: &Path) -> Result<SplitSummary, OrchestrationError> {
    let path = run_dir.join(recipe::SPLIT);
    let text = fs::read_to_string(&path).map_err(|e| OrchestrationError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| OrchestrationError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn stage_evaluate(ctx: &StageContext) -> Result<(), Error> {
    let checkpoint = ModelCheckpoint::load(&ctx.run_dir.join(recipe::CHECKPOINT))?;
    let split = read_split(ctx.run_dir)?;
    let valid = TensorDataset::from_samples(&split.valid, checkpoint.task, checkpoint.config.input_px)?;
    let report = modeling::evaluate(&checkpoint, &valid)?;
    log::info!("validation metrics: {:?}", report.metrics);
    reporting::save_report(&report, &ctx.run_dir.join(recipe::REPORT))?;
    Ok(())
}

/// Runs (or resumes) `recipe`, recording progress in the registry.
///
/// A failing stage leaves earlier outputs in place, appends a failed
/// entry and returns [`OrchestrationError::StageFailed`] (or
/// [`OrchestrationError::DataUnavailable`] when the dataset is missing).
pub fn run_recipe(
    recipe: &ExperimentRecipe,
    config: &PipelineConfig,
    options: RunOptions,
) -> Result<RunRegistryEntry, OrchestrationError> {
    config.validate()?;
    let ops = recipe.validate()?;
    let hash = config_hash(recipe, config);
    let id = run_id(recipe, config);
    let runs_dir = config.runs_dir();
    let run_dir = runs_dir.join(&id);
    fs::create_dir_all(&run_dir).map_err(|e| OrchestrationError::io(&run_dir, e))?;
    let _lock = RunLock::acquire(&run_dir, &id)?;
    let registry = Registry::open(&runs_dir);

    let config_path = run_dir.join(recipe::CONFIG);
    if !config_path.exists() {
        let body = RunConfigFile {
            run_id: &id,
            config_hash: &hash,
            recipe,
            config,
        };
        fs::write(
            &config_path,
            serde_json::to_string_pretty(&body).expect("config serializes"),
        )
        .map_err(|e| OrchestrationError::io(&config_path, e))?;
    }

    let mut done = read_stage_log(&run_dir)?;
    let entry = |status: RunStatus, done: &[StageRecord], failure: Option<StageFailure>| {
        let mut artifacts = vec![recipe::CONFIG.to_string(), STAGE_LOG.to_string()];
        artifacts.extend(done.iter().flat_map(|r| r.outputs.iter().cloned()));
        RunRegistryEntry {
            run_id: id.clone(),
            recipe: recipe.name.clone(),
            config_hash: hash.clone(),
            status,
            artifacts,
            stages: done
                .iter()
                .map(|r| StageTiming {
                    name: r.name.clone(),
                    wall_time_s: r.wall_time_s,
                })
                .collect(),
            failure,
            recorded_at: Utc::now(),
        }
    };
    if done.len() == recipe.stages.len() {
        log::info!("run {id} is already complete");
        return registry.show_run(&id).or_else(|_| {
            let e = entry(RunStatus::Done, &done, None);
            registry.append(&e)?;
            Ok(e)
        });
    }
    registry.append(&entry(RunStatus::Running, &done, None))?;

    let ctx_base = |seed| StageContext {
        config,
        data_root: config.data_root(),
        run_dir: &run_dir,
        run_id: &id,
        config_hash: &hash,
        seed,
    };
    let mut executed = 0;
    for (index, (stage, op)) in recipe.stages.iter().zip(&ops).enumerate() {
        if done.iter().any(|r| r.name == stage.name) {
            log::info!("stage {} already done, skipping", stage.name);
            continue;
        }
        if options.stop_after.is_some_and(|n| executed >= n) {
            log::info!("stopping before stage {} as requested", stage.name);
            return Ok(entry(RunStatus::Running, &done, None));
        }
        let seed = recipe.seed.wrapping_add(index as u64);
        log::info!(
            "stage {index} {} ({}.{}) seed {seed}",
            stage.name,
            stage.module,
            stage.operation
        );
        let started = Instant::now();
        if let Err(e) = execute(*op, &ctx_base(seed)) {
            let failure = StageFailure {
                stage: stage.name.clone(),
                diagnostics: e.to_string(),
            };
            let failed = entry(RunStatus::Failed, &done, Some(failure));
            registry.append(&failed)?;
            let entry = Box::new(failed);
            return Err(if is_data_unavailable(&e) {
                OrchestrationError::DataUnavailable {
                    entry,
                    message: e.to_string(),
                }
            } else {
                OrchestrationError::StageFailed {
                    entry,
                    stage: stage.name.clone(),
                    diagnostics: e.to_string(),
                }
            });
        }
        let record = StageRecord {
            index,
            name: stage.name.clone(),
            module: stage.module.clone(),
            operation: stage.operation.clone(),
            seed,
            wall_time_s: started.elapsed().as_secs_f64(),
            outputs: op.outputs().iter().map(|s| s.to_string()).collect(),
        };
        append_stage_log(&run_dir, &record)?;
        done.push(record);
        executed += 1;
    }

    let missing: Vec<String> = recipe
        .expected_outputs
        .iter()
        .filter(|a| !run_dir.join(&a.path).exists())
        .map(|a| a.path.clone())
        .collect();
    if !missing.is_empty() {
        let failed = entry(
            RunStatus::Failed,
            &done,
            Some(StageFailure {
                stage: "outputs".into(),
                diagnostics: format!("missing expected outputs {missing:?}"),
            }),
        );
        registry.append(&failed)?;
        return Err(OrchestrationError::StageFailed {
            entry: Box::new(failed),
            stage: "outputs".into(),
            diagnostics: format!("missing expected outputs {missing:?}"),
        });
    }
    let finished = entry(RunStatus::Done, &done, None);
    registry.append(&finished)?;
    Ok(finished)
}

/// Reports of finished runs keyed by their training input, with total
/// sample counts, for the summary table.
pub fn table_entries(runs_dir: &Path, run_ids: &[String]) -> Result<BTreeMap<InputMode, reporting::TableEntry>, Error> {
    let mut out = BTreeMap::new();
    for id in run_ids {
        let dir = runs_dir.join(id);
        let split = read_split(&dir)?;
        let report = reporting::load_report(&dir.join(recipe::REPORT))?;
        out.insert(
            split.input,
            reporting::TableEntry {
                n: split.n_samples,
                report,
            },
        );
    }
    Ok(out)
}
