use std::fs;
use std::path::Path;

use welfare_vision::ingestion::{run_scrape, ScrapeConfig};
use welfare_vision::orchestration::{
    builtin_recipe, read_split, read_stage_log, run_id, run_recipe, table_entries, ExperimentRecipe,
    OrchestrationError, PipelineConfig, Registry, RunOptions, RunStatus, Stage, CONFUSION_NORMALIZED, CONFUSION_RAW,
    LOCK_FILE, REPORT, SCATTER,
};
use welfare_vision::reporting::{render_category_table, CategoryTable};
use welfare_vision::synthetic::{fixture_households, write_fixture_site};
use welfare_vision::InputMode;

/// Scrapes a 40-household fixture mirror into `root`.
fn dataset(root: &Path) {
    let site = tempfile::tempdir().unwrap();
    write_fixture_site(site.path(), &fixture_households(40, 8), 12, 2).unwrap();
    let c = ScrapeConfig::new(site.path().to_str().unwrap(), root);
    run_scrape(&c, &c.fetcher()).unwrap();
}

fn tiny_config(root: &Path) -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.data_root = Some(root.to_path_buf());
    c.seed = 5;
    c.preprocess.tile_px = 8;
    c.train.backbone_id = "resnet-micro".into();
    c.train.input_px = 24;
    c.train.epochs = 2;
    c.train.batch_size = 8;
    c
}

fn executed(recipe: &ExperimentRecipe, config: &PipelineConfig) -> Vec<String> {
    read_stage_log(&config.runs_dir().join(run_id(recipe, config)))
        .unwrap()
        .into_iter()
        .map(|r| r.name)
        .collect()
}

#[test]
fn merged_regression_recipe_produces_report_and_scatter() {
    let root = tempfile::tempdir().unwrap();
    dataset(root.path());
    let config = tiny_config(root.path());
    let recipe = builtin_recipe("regression-merged", config.seed).unwrap();
    let entry = run_recipe(&recipe, &config, RunOptions::default()).unwrap();
    assert_eq!(entry.status, RunStatus::Done);
    for a in &recipe.expected_outputs {
        assert!(entry.artifacts.contains(&a.path), "{} not listed", a.path);
    }
    let run_dir = config.runs_dir().join(&entry.run_id);
    assert!(run_dir.join(SCATTER).exists());
    assert!(run_dir.join(REPORT).exists());
    let split = read_split(&run_dir).unwrap();
    assert_eq!(split.input, InputMode::Merged);
    assert_eq!(split.n_valid, split.n_samples / 5);

    let registry = Registry::open(&config.runs_dir());
    let runs = registry.list_runs().unwrap();
    assert_eq!(runs.len(), 1);
    let shown = registry.show_run(&entry.run_id).unwrap();
    assert_eq!(shown.status, RunStatus::Done);
    let names: Vec<_> = shown.stages.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ["verify", "prepare", "train", "evaluate", "scatter"]);
    assert!(shown.stages.iter().all(|s| s.wall_time_s >= 0.0));

    // Per-stage seeds fan out from the recipe seed.
    let log = read_stage_log(&run_dir).unwrap();
    for r in &log {
        assert_eq!(r.seed, config.seed + r.index as u64);
    }

    // A finished run is not executed again.
    let again = run_recipe(&recipe, &config, RunOptions::default()).unwrap();
    assert_eq!(again.status, RunStatus::Done);
    assert_eq!(read_stage_log(&run_dir).unwrap(), log);
}

#[test]
fn interrupted_runs_resume_after_the_last_completed_stage() {
    let root = tempfile::tempdir().unwrap();
    dataset(root.path());
    let config = tiny_config(root.path());
    let recipe = builtin_recipe("regression-stoves", config.seed).unwrap();
    let partial = run_recipe(&recipe, &config, RunOptions { stop_after: Some(2) }).unwrap();
    assert_eq!(partial.status, RunStatus::Running);
    assert_eq!(executed(&recipe, &config), ["verify", "prepare"]);
    let done = run_recipe(&recipe, &config, RunOptions::default()).unwrap();
    assert_eq!(done.status, RunStatus::Done);
    assert_eq!(
        executed(&recipe, &config),
        ["verify", "prepare", "train", "evaluate", "scatter"]
    );
}

#[test]
fn income_group_classification_balances_and_renders_confusions() {
    let root = tempfile::tempdir().unwrap();
    dataset(root.path());
    let config = tiny_config(root.path());
    let recipe = builtin_recipe("clf-by-income-group", config.seed).unwrap();
    let entry = run_recipe(&recipe, &config, RunOptions::default()).unwrap();
    let run_dir = config.runs_dir().join(&entry.run_id);
    assert!(run_dir.join(CONFUSION_RAW).exists());
    assert!(run_dir.join(CONFUSION_NORMALIZED).exists());
    let split = read_split(&run_dir).unwrap();
    let positives = split.positives_before_balance.unwrap();
    assert!(positives > 0);
    // Undersampling keeps every positive and as many negatives.
    assert_eq!(split.n_samples, 2 * positives);
    let report = welfare_vision::reporting::load_report(&run_dir.join(REPORT)).unwrap();
    assert_eq!(report.confusion.unwrap().total() as usize, split.n_valid);
}

#[test]
fn missing_dataset_is_data_unavailable() {
    let root = tempfile::tempdir().unwrap();
    let config = tiny_config(root.path());
    let recipe = builtin_recipe("regression-roofs", config.seed).unwrap();
    let err = run_recipe(&recipe, &config, RunOptions::default()).unwrap_err();
    assert_eq!(err.exit_code(), 4);
    let OrchestrationError::DataUnavailable { entry, .. } = err else {
        panic!("{err:?}")
    };
    assert_eq!(entry.status, RunStatus::Failed);
    assert_eq!(entry.failure.unwrap().stage, "verify");
    let shown = Registry::open(&config.runs_dir()).show_run(&entry.run_id).unwrap();
    assert_eq!(shown.status, RunStatus::Failed);
}

#[test]
fn stage_failure_keeps_earlier_artifacts_and_names_the_stage() {
    let root = tempfile::tempdir().unwrap();
    dataset(root.path());
    let mut config = tiny_config(root.path());
    config.train.backbone_id = "no-such-backbone".into();
    let recipe = builtin_recipe("regression-showers", config.seed).unwrap();
    let err = run_recipe(&recipe, &config, RunOptions::default()).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    let OrchestrationError::StageFailed {
        entry,
        stage,
        diagnostics,
    } = err
    else {
        panic!("{err:?}")
    };
    assert_eq!(stage, "train");
    assert!(diagnostics.contains("no-such-backbone"), "{diagnostics}");
    assert_eq!(entry.failure.as_ref().unwrap().stage, "train");
    assert_eq!(executed(&recipe, &config), ["verify", "prepare"]);
    assert!(config.runs_dir().join(&entry.run_id).join("labeled.jsonl").exists());
}

#[test]
fn invalid_recipes_fail_before_anything_runs() {
    let root = tempfile::tempdir().unwrap();
    let config = tiny_config(root.path());
    let mut recipe = builtin_recipe("regression-merged", config.seed).unwrap();
    recipe.stages.insert(1, Stage::new("warp", "modeling", "teleport", &[]));
    let err = run_recipe(&recipe, &config, RunOptions::default()).unwrap_err();
    assert!(matches!(err, OrchestrationError::InvalidRecipe { .. }), "{err:?}");
    assert_eq!(err.exit_code(), 2);
    assert!(!config.runs_dir().exists());
    assert!(matches!(
        builtin_recipe("nope", 0),
        Err(OrchestrationError::InvalidRecipe { .. })
    ));
}

#[test]
fn a_locked_run_directory_is_refused() {
    let root = tempfile::tempdir().unwrap();
    let config = tiny_config(root.path());
    let recipe = builtin_recipe("regression-merged", config.seed).unwrap();
    let dir = config.runs_dir().join(run_id(&recipe, &config));
    fs::create_dir_all(&dir).unwrap();
    let holder = fs::File::create(dir.join(LOCK_FILE)).unwrap();
    holder.lock().unwrap();
    let err = run_recipe(&recipe, &config, RunOptions::default()).unwrap_err();
    assert!(matches!(err, OrchestrationError::RunLocked(_)), "{err:?}");
}

#[test]
fn summary_table_collects_finished_runs() {
    let root = tempfile::tempdir().unwrap();
    dataset(root.path());
    let config = tiny_config(root.path());
    let mut ids = Vec::new();
    for name in ["regression-bathrooms", "regression-merged"] {
        let recipe = builtin_recipe(name, config.seed).unwrap();
        ids.push(run_recipe(&recipe, &config, RunOptions::default()).unwrap().run_id);
    }
    let entries = table_entries(&config.runs_dir(), &ids).unwrap();
    let out = root.path().join("table.txt");
    let table: CategoryTable = render_category_table(&entries, &out).unwrap();
    assert_eq!(table.rows.len(), 2);
    assert_eq!(
        table.rows[0].input,
        InputMode::Category(welfare_vision::Category::Bathrooms)
    );
    assert_eq!(table.rows[1].input, InputMode::Merged);
    assert!(out.with_extension("csv").exists());
}
