//! `welfare-vision`: scrape, preprocess, train, report and run recipes.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use welfare_vision::ingestion::{run_scrape, DatasetManifest, MANIFEST_FILE};
use welfare_vision::orchestration::{
    builtin_recipe, builtin_recipes, income_table, parse_policy, parse_task, poverty_policy, run_recipe, table_entries,
    ExperimentRecipe, OrchestrationError, PipelineConfig, Registry, RunOptions, RunRegistryEntry, REPORT,
};
use welfare_vision::preprocess::{self, labeled_rows, write_labeled, MosaicSpec, PreprocessOptions, LABELED_FILE};
use welfare_vision::reporting::{self, render_category_table, PlotMeta, ReportError};
use welfare_vision::{Category, Error, InputMode, Task};

#[derive(Parser)]
#[command(
    name = "welfare-vision",
    version,
    about = "Consumption and poverty prediction from household photos"
)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `data_root` from the config (default `$WEALTH_DATA_ROOT`, then `./data`).
    #[arg(long, global = true)]
    data_root: Option<PathBuf>,
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Crawl the photo site into a local dataset with a manifest.
    Scrape(ScrapeArgs),
    /// Label households, split them and build mosaics.
    Preprocess(PreprocessArgs),
    /// Train one model as an ad-hoc run.
    Train(TrainArgs),
    /// Render figures and tables from finished runs.
    Report {
        #[command(subcommand)]
        kind: ReportKind,
    },
    /// Run (or resume) a built-in recipe.
    RunRecipe(RunRecipeArgs),
    /// Latest status of every run.
    ListRuns,
    /// One run's registry entry, with stage timings.
    ShowRun { run_id: String },
}

#[derive(Args)]
struct ScrapeArgs {
    #[arg(long)]
    base_url: Option<String>,
    /// Comma-separated category slugs.
    #[arg(long, value_delimiter = ',')]
    categories: Vec<Category>,
    /// Output root (defaults to the data root).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, overrides_with = "no_resume")]
    resume: bool,
    /// Download everything again.
    #[arg(long)]
    no_resume: bool,
    #[arg(long)]
    max_concurrent: Option<usize>,
    #[arg(long)]
    min_interval_ms: Option<u64>,
}

#[derive(Args)]
struct PreprocessArgs {
    /// `uniform` or `by-group`.
    #[arg(long, default_value = "uniform", value_parser = parse_policy)]
    policy: preprocess::PolicyMode,
    #[arg(long)]
    cap_usd: Option<f64>,
    #[arg(long)]
    tile_px: Option<u32>,
    #[arg(long)]
    no_mosaics: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// `regression` or `classification`.
    #[arg(long, value_parser = parse_task)]
    task: Task,
    /// A category slug, `merged` or `pooled`.
    #[arg(long)]
    input: InputMode,
    /// Poverty policy for classification: `uniform` or `by-group`.
    #[arg(long, default_value = "by-group")]
    policy: String,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    input_px: Option<u32>,
    #[arg(long)]
    backbone: Option<String>,
    /// Checkpoint whose backbone initialises the model.
    #[arg(long)]
    pretrained: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum ReportKind {
    /// Predicted vs. actual log consumption with the 45° line.
    Scatter {
        #[arg(long)]
        run: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Confusion heatmap of a classification run.
    Confusion {
        #[arg(long)]
        run: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        normalized: bool,
    },
    /// n / rmse / r2 per input; writes PATH and PATH with a .csv extension.
    Table {
        #[arg(long, required = true)]
        run: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunRecipeArgs {
    /// Recipe name; see --list.
    #[arg(required_unless_present_any = ["list", "all"])]
    name: Option<String>,
    /// Run every built-in recipe.
    #[arg(long, conflicts_with = "name")]
    all: bool,
    /// Print the built-in recipe names.
    #[arg(long)]
    list: bool,
    /// Stop after this many stages (resume later with the same command).
    #[arg(long)]
    stop_after: Option<usize>,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(root) = &cli.data_root {
        config.data_root = Some(root.clone());
    }
    Ok(config)
}

fn scrape(config: &PipelineConfig, args: &ScrapeArgs) -> Result<(), Error> {
    let mut config = config.clone();
    if let Some(url) = &args.base_url {
        config.scrape.base_url = Some(url.clone());
    }
    if !args.categories.is_empty() {
        config.scrape.categories = args.categories.clone();
    }
    if args.resume {
        config.scrape.resume = true;
    }
    if args.no_resume {
        config.scrape.resume = false;
    }
    if let Some(n) = args.max_concurrent {
        config.scrape.max_concurrent = n;
    }
    if let Some(ms) = args.min_interval_ms {
        config.scrape.min_request_interval_ms = ms;
    }
    let mut scrape = config.scrape_config()?;
    if let Some(out) = &args.out {
        scrape.output_root = out.clone();
    }
    let summary = run_scrape(&scrape, &scrape.fetcher())?;
    println!(
        "{} families in {} countries, {} assets, {} failures, {} skipped pages, {} requests",
        summary.families,
        summary.countries,
        summary.manifest.asset_ref_count(),
        summary.failures.len(),
        summary.skipped_families.len(),
        summary.requests
    );
    println!("manifest {}", summary.manifest.hash());
    Ok(())
}

fn preprocess(config: &PipelineConfig, args: &PreprocessArgs) -> Result<(), Error> {
    let root = config.data_root();
    let manifest = DatasetManifest::read(&root.join(MANIFEST_FILE))?;
    let options = PreprocessOptions {
        policy: poverty_policy(config, args.policy),
        cap_usd: args.cap_usd.unwrap_or(config.preprocess.cap_usd),
        seed: config.seed,
        mosaic: MosaicSpec::with_tile_px(args.tile_px.unwrap_or(config.preprocess.tile_px)),
        write_mosaics: !args.no_mosaics,
    };
    let prepared = preprocess::prepare(&manifest, &root, &income_table(config)?, &options)?;
    let rows = labeled_rows(&manifest, &prepared.records, &prepared.splits);
    let out = root.join(LABELED_FILE);
    write_labeled(&out, &rows)?;
    println!("{} -> {} households", prepared.households_in, prepared.records.len());
    let positives = prepared.records.iter().filter(|r| r.poverty_label == Some(1)).count();
    println!("{positives} labeled poor");
    for (mode, n) in &prepared.category_counts {
        println!("{:>18}  {n}", mode.to_string());
    }
    for (id, e) in &prepared.mosaic_failures {
        println!("mosaic failed for {id}: {e}");
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn train(config: &PipelineConfig, args: &TrainArgs) -> Result<(), Error> {
    let mut config = config.clone();
    let t = &mut config.train;
    t.epochs = args.epochs.unwrap_or(t.epochs);
    t.batch_size = args.batch_size.unwrap_or(t.batch_size);
    t.learning_rate = args.lr.unwrap_or(t.learning_rate);
    t.input_px = args.input_px.unwrap_or(t.input_px);
    if let Some(b) = &args.backbone {
        t.backbone_id = b.clone();
    }
    if args.pretrained.is_some() {
        t.pretrained = args.pretrained.clone();
    }
    let seed = args.seed.unwrap_or(config.seed);
    let recipe = match args.task {
        Task::Regression => ExperimentRecipe::regression(&format!("train-reg-{}", args.input), args.input, seed),
        Task::Classification => ExperimentRecipe::classification(
            &format!("train-clf-{}-{}", args.policy, args.input),
            &args.policy,
            args.input,
            seed,
        ),
    };
    finish(run_recipe(&recipe, &config, RunOptions::default())?, &config)
}

fn finish(entry: RunRegistryEntry, config: &PipelineConfig) -> Result<(), Error> {
    let dir = config.runs_dir().join(&entry.run_id);
    println!("{} {:?}", entry.run_id, entry.status);
    if let Ok(report) = reporting::load_report(&dir.join(REPORT)) {
        for (k, v) in &report.metrics {
            match v {
                Some(v) => println!("  {k} = {v:.6}"),
                None => println!("  {k} undefined"),
            }
        }
    }
    println!("  artifacts in {}", dir.display());
    Ok(())
}

fn plot_meta(registry: &Registry, run_id: &str, title: &str) -> Result<PlotMeta, Error> {
    let entry = registry.show_run(run_id)?;
    Ok(PlotMeta {
        run_id: entry.run_id,
        config_hash: entry.config_hash,
        title: title.to_string(),
    })
}

fn report(config: &PipelineConfig, kind: &ReportKind) -> Result<(), Error> {
    let runs = config.runs_dir();
    let registry = Registry::open(&runs);
    let load = |run: &str| reporting::load_report(&runs.join(run).join(REPORT));
    match kind {
        ReportKind::Scatter { run, out } => {
            let meta = plot_meta(&registry, run, "prediction vs target")?;
            reporting::render_scatter(&load(run)?, out, &meta)?;
            println!("wrote {}", out.display());
        }
        ReportKind::Confusion { run, out, normalized } => {
            let title = if *normalized {
                "confusion matrix (row normalized)"
            } else {
                "confusion matrix"
            };
            let meta = plot_meta(&registry, run, title)?;
            let report = load(run)?;
            let cm = report.confusion.ok_or(ReportError::MissingConfusion)?;
            reporting::render_confusion(&cm, *normalized, out, &meta)?;
            println!("wrote {}", out.display());
        }
        ReportKind::Table { run, out } => {
            for id in run {
                registry.show_run(id)?;
            }
            let table = render_category_table(&table_entries(&runs, run)?, out)?;
            print!("{}", table.to_plaintext());
        }
    }
    Ok(())
}

fn run_recipes(config: &PipelineConfig, args: &RunRecipeArgs) -> Result<(), Error> {
    if args.list {
        for r in builtin_recipes(config.seed) {
            let stages: Vec<&str> = r.stages.iter().map(|s| s.name.as_str()).collect();
            println!("{:<28} {}", r.name, stages.join(" -> "));
        }
        return Ok(());
    }
    let recipes = if args.all {
        builtin_recipes(config.seed)
    } else {
        vec![builtin_recipe(args.name.as_deref().unwrap_or_default(), config.seed)?]
    };
    let options = RunOptions {
        stop_after: args.stop_after,
    };
    for recipe in &recipes {
        finish(run_recipe(recipe, config, options)?, config)?;
    }
    Ok(())
}

fn print_entry(e: &RunRegistryEntry) {
    let total: f64 = e.stages.iter().map(|s| s.wall_time_s).sum();
    println!(
        "{:<44} {:<8} {:<26} {:>3} stages {:>9.1}s  {}",
        e.run_id,
        format!("{:?}", e.status).to_lowercase(),
        e.recipe,
        e.stages.len(),
        total,
        e.recorded_at.format("%Y-%m-%d %H:%M:%S")
    );
}

fn list_runs(config: &PipelineConfig) -> Result<(), Error> {
    let runs = Registry::open(&config.runs_dir()).list_runs()?;
    if runs.is_empty() {
        println!("no runs in {}", config.runs_dir().display());
    }
    runs.iter().for_each(print_entry);
    Ok(())
}

fn show_run(config: &PipelineConfig, run_id: &str) -> Result<(), Error> {
    let e = Registry::open(&config.runs_dir()).show_run(run_id)?;
    print_entry(&e);
    println!("config hash {}", e.config_hash);
    for s in &e.stages {
        println!("  {:<22} {:>9.2}s", s.name, s.wall_time_s);
    }
    if let Some(f) = &e.failure {
        println!("  failed in {}: {}", f.stage, f.diagnostics);
    }
    let dir = config.runs_dir().join(&e.run_id);
    for a in &e.artifacts {
        println!("  {}", dir.join(a).display());
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Error> {
    let config = load_config(cli)?;
    match &cli.command {
        Command::Scrape(a) => scrape(&config, a),
        Command::Preprocess(a) => preprocess(&config, a),
        Command::Train(a) => train(&config, a),
        Command::Report { kind } => report(&config, kind),
        Command::RunRecipe(a) => run_recipes(&config, a),
        Command::ListRuns => list_runs(&config),
        Command::ShowRun { run_id } => show_run(&config, run_id),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Orchestration(OrchestrationError::StageFailed { entry, .. }) = &e {
                eprintln!("run {} recorded as failed", entry.run_id);
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
