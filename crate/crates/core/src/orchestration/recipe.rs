//! Experiment recipes: ordered stages, each naming a module operation.
//!
//! | module      | operation       | params                         | writes                         |
//! |-------------|-----------------|--------------------------------|--------------------------------|
//! | ingestion   | verify_manifest |                                |                                |
//! | preprocess  | prepare         | `policy`, `mosaics`            | `labeled.jsonl`                |
//! | modeling    | train           | `task`, `input`                | `checkpoint.bin`, `epochs.jsonl`, `split.json` |
//! | modeling    | evaluate        |                                | `report.json`, `pairs.csv`     |
//! | reporting   | scatter         |                                | `scatter.png`                  |
//! | reporting   | confusion       | `normalized`                   | `confusion_raw.png` or `confusion_normalized.png` |
//!
//! A stage's inputs come from the closest earlier stage producing them.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::category::Category;
use crate::ingestion::sha256_hex;
use crate::metrics::Task;
use crate::preprocess::{InputMode, PolicyMode};

use super::config::PipelineConfig;
use super::OrchestrationError;

pub const LABELED: &str = "labeled.jsonl";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const EPOCHS: &str = "epochs.jsonl";
pub const SPLIT: &str = "split.json";
pub const REPORT: &str = "report.json";
pub const PAIRS: &str = "pairs.csv";
pub const SCATTER: &str = "scatter.png";
pub const CONFUSION_RAW: &str = "confusion_raw.png";
pub const CONFUSION_NORMALIZED: &str = "confusion_normalized.png";
pub const CONFIG: &str = "config.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub module: String,
    pub operation: String,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
}

impl Stage {
    pub fn new(name: &str, module: &str, operation: &str, params: &[(&str, &str)]) -> Self {
        Self {
            name: name.into(),
            module: module.into(),
            operation: operation.into(),
            params: params.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

/// A file a finished run must contain, relative to the run directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactDescriptor {
    pub stage: String,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentRecipe {
    pub name: String,
    pub stages: Vec<Stage>,
    pub expected_outputs: Vec<ArtifactDescriptor>,
    pub seed: u64,
}

/// A stage after validation, with typed parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operation {
    VerifyManifest,
    Prepare { policy: PolicyMode, mosaics: bool },
    Train { task: Task, input: InputMode },
    Evaluate,
    Scatter,
    Confusion { normalized: bool },
}

impl Operation {
    pub fn parse(stage: &Stage) -> Result<Self, String> {
        let p = &stage.params;
        let allowed: &[&str] = match (stage.module.as_str(), stage.operation.as_str()) {
            ("ingestion", "verify_manifest") | ("modeling", "evaluate") | ("reporting", "scatter") => &[],
            ("preprocess", "prepare") => &["policy", "mosaics"],
            ("modeling", "train") => &["task", "input"],
            ("reporting", "confusion") => &["normalized"],
            (m, o) => return Err(format!("unknown operation {m}.{o}")),
        };
        if let Some(k) = p.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(format!("unknown parameter {k:?}"));
        }
        let flag = |key: &str, default: bool| match p.get(key).map(String::as_str) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(format!("{key} must be true or false, got {v:?}")),
        };
        Ok(match (stage.module.as_str(), stage.operation.as_str()) {
            ("ingestion", _) => Operation::VerifyManifest,
            ("preprocess", _) => Operation::Prepare {
                policy: parse_policy(p.get("policy").map_or("uniform", String::as_str))?,
                mosaics: flag("mosaics", true)?,
            },
            ("modeling", "train") => {
                let task = parse_task(p.get("task").ok_or("missing parameter task")?)?;
                let input: InputMode = p
                    .get("input")
                    .ok_or("missing parameter input")?
                    .parse()
                    .map_err(|e: crate::preprocess::PreprocessError| e.to_string())?;
                Operation::Train { task, input }
            }
            ("modeling", _) => Operation::Evaluate,
            ("reporting", "scatter") => Operation::Scatter,
            _ => Operation::Confusion {
                normalized: flag("normalized", false)?,
            },
        })
    }

    /// Files this operation writes into the run directory.
    pub fn outputs(&self) -> Vec<&'static str> {
        match self {
            Operation::VerifyManifest => vec![],
            Operation::Prepare { .. } => vec![LABELED],
            Operation::Train { .. } => vec![CHECKPOINT, EPOCHS, SPLIT],
            Operation::Evaluate => vec![REPORT],
            Operation::Scatter => vec![SCATTER],
            Operation::Confusion { normalized: false } => vec![CONFUSION_RAW],
            Operation::Confusion { normalized: true } => vec![CONFUSION_NORMALIZED],
        }
    }

    fn requires(&self) -> &'static [&'static str] {
        match self {
            Operation::VerifyManifest | Operation::Prepare { .. } => &[],
            Operation::Train { .. } => &[LABELED],
            Operation::Evaluate => &[CHECKPOINT, SPLIT],
            Operation::Scatter | Operation::Confusion { .. } => &[REPORT],
        }
    }
}

pub fn parse_task(s: &str) -> Result<Task, String> {
    match s {
        "reg" | "regression" => Ok(Task::Regression),
        "clf" | "classification" => Ok(Task::Classification),
        other => Err(format!("unknown task {other:?} (reg or clf)")),
    }
}

pub fn parse_policy(s: &str) -> Result<PolicyMode, String> {
    match s {
        "uniform" => Ok(PolicyMode::Uniform),
        "by-group" | "by_income_group" | "by-income-group" => Ok(PolicyMode::ByIncomeGroup),
        other => Err(format!("unknown policy {other:?} (uniform or by-group)")),
    }
}

impl ExperimentRecipe {
    /// Checks names, operations, parameters and that every stage input is
    /// produced by an earlier stage. Returns the typed operations.
    pub fn validate(&self) -> Result<Vec<Operation>, OrchestrationError> {
        let invalid = |m: String| OrchestrationError::InvalidRecipe {
            recipe: self.name.clone(),
            message: m,
        };
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return Err(invalid(format!(
                "recipe name {:?} must be non-empty [A-Za-z0-9_-]",
                self.name
            )));
        }
        if self.stages.is_empty() {
            return Err(invalid("recipe has no stages".into()));
        }
        let mut names = BTreeSet::new();
        let mut produced: BTreeMap<&str, &str> = BTreeMap::new();
        let mut ops = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            if !names.insert(stage.name.as_str()) {
                return Err(invalid(format!("duplicate stage name {:?}", stage.name)));
            }
            let op = Operation::parse(stage).map_err(|m| invalid(format!("stage {:?}: {m}", stage.name)))?;
            for need in op.requires() {
                if !produced.contains_key(need) {
                    return Err(invalid(format!(
                        "stage {:?} needs {need}, which no earlier stage produces",
                        stage.name
                    )));
                }
            }
            for out in op.outputs() {
                produced.insert(out, stage.name.as_str());
            }
            ops.push(op);
        }
        for a in &self.expected_outputs {
            match produced.get(a.path.as_str()) {
                Some(_) if names.contains(a.stage.as_str()) => {}
                _ => {
                    return Err(invalid(format!(
                        "expected output {} is not produced by stage {:?}",
                        a.path, a.stage
                    )))
                }
            }
        }
        Ok(ops)
    }

    /// Derives `expected_outputs` from the stages' declared outputs.
    fn with_all_outputs(mut self) -> Self {
        self.expected_outputs = self
            .stages
            .iter()
            .filter_map(|s| Operation::parse(s).ok().map(|op| (s, op)))
            .flat_map(|(s, op)| {
                op.outputs().into_iter().map(move |p| ArtifactDescriptor {
                    stage: s.name.clone(),
                    path: p.to_string(),
                })
            })
            .collect();
        self
    }

    pub fn regression(name: &str, input: InputMode, seed: u64) -> Self {
        let input_s = input.to_string();
        let mosaics = if input == InputMode::Merged { "true" } else { "false" };
        Self {
            name: name.into(),
            stages: vec![
                Stage::new("verify", "ingestion", "verify_manifest", &[]),
                Stage::new(
                    "prepare",
                    "preprocess",
                    "prepare",
                    &[("policy", "uniform"), ("mosaics", mosaics)],
                ),
                Stage::new(
                    "train",
                    "modeling",
                    "train",
                    &[("task", "regression"), ("input", &input_s)],
                ),
                Stage::new("evaluate", "modeling", "evaluate", &[]),
                Stage::new("scatter", "reporting", "scatter", &[]),
            ],
            expected_outputs: vec![],
            seed,
        }
        .with_all_outputs()
    }

    pub fn classification(name: &str, policy: &str, input: InputMode, seed: u64) -> Self {
        let input_s = input.to_string();
        let mosaics = if input == InputMode::Merged { "true" } else { "false" };
        Self {
            name: name.into(),
            stages: vec![
                Stage::new("verify", "ingestion", "verify_manifest", &[]),
                Stage::new(
                    "prepare",
                    "preprocess",
                    "prepare",
                    &[("policy", policy), ("mosaics", mosaics)],
                ),
                Stage::new(
                    "train",
                    "modeling",
                    "train",
                    &[("task", "classification"), ("input", &input_s)],
                ),
                Stage::new("evaluate", "modeling", "evaluate", &[]),
                Stage::new("confusion-raw", "reporting", "confusion", &[("normalized", "false")]),
                Stage::new(
                    "confusion-normalized",
                    "reporting",
                    "confusion",
                    &[("normalized", "true")],
                ),
            ],
            expected_outputs: vec![],
            seed,
        }
        .with_all_outputs()
    }
}

/// The built-in experiments: one regression per category, the merged
/// regression, and classification under both poverty policies.
pub fn builtin_recipes(seed: u64) -> Vec<ExperimentRecipe> {
    let mut out: Vec<ExperimentRecipe> = Category::ALL
        .iter()
        .map(|c| ExperimentRecipe::regression(&format!("regression-{}", c.slug()), InputMode::Category(*c), seed))
        .collect();
    out.push(ExperimentRecipe::regression(
        "regression-merged",
        InputMode::Merged,
        seed,
    ));
    out.push(ExperimentRecipe::classification(
        "clf-uniform",
        "uniform",
        InputMode::Pooled,
        seed,
    ));
    out.push(ExperimentRecipe::classification(
        "clf-by-income-group",
        "by-group",
        InputMode::Pooled,
        seed,
    ));
    out
}

pub fn builtin_recipe(name: &str, seed: u64) -> Result<ExperimentRecipe, OrchestrationError> {
    builtin_recipes(seed)
        .into_iter()
        .find(|r| r.name == name)
        .ok_or_else(|| OrchestrationError::InvalidRecipe {
            recipe: name.to_string(),
            message: format!(
                "no such built-in recipe (known: {})",
                builtin_recipes(seed)
                    .iter()
                    .map(|r| r.name.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        })
}

/// Hash of everything that can change a run's outputs: the recipe and the
/// seed, preprocessing and training settings. Scrape settings and the data
/// root location are excluded.
pub fn config_hash(recipe: &ExperimentRecipe, config: &PipelineConfig) -> String {
    #[derive(Serialize)]
    struct Hashed<'a> {
        recipe: &'a ExperimentRecipe,
        seed: u64,
        preprocess: &'a super::config::PreprocessSection,
        train: &'a super::config::TrainSection,
    }
    let json = serde_json::to_string(&Hashed {
        recipe,
        seed: config.seed,
        preprocess: &config.preprocess,
        train: &config.train,
    })
    .expect("config serializes");
    sha256_hex(json.as_bytes())
}
