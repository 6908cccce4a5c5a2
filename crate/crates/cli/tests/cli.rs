use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use welfare_vision::synthetic::{fixture_households, write_fixture_site};

fn cli(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_welfare-vision"))
        .args(args)
        .env("WEALTH_DATA_ROOT", root)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

const TINY: &str = r#"
seed = 3
[preprocess]
tile_px = 8
[train]
backbone_id = "resnet-micro"
input_px = 24
epochs = 1
batch_size = 8
"#;

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.toml");
    fs::write(&path, TINY).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn scrape_preprocess_run_and_report() {
    let site = tempfile::tempdir().unwrap();
    write_fixture_site(site.path(), &fixture_households(30, 4), 12, 1).unwrap();
    let root = tempfile::tempdir().unwrap();
    let config = tiny_config(root.path());

    let o = cli(
        root.path(),
        &[
            "scrape",
            "--base-url",
            site.path().to_str().unwrap(),
            "--min-interval-ms",
            "0",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("30 families"), "{}", stdout(&o));
    assert!(root.path().join("manifest.jsonl").exists());

    let o = cli(
        root.path(),
        &["--config", &config, "preprocess", "--policy", "by-group"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("30 -> "));
    assert!(root.path().join("labeled.jsonl").exists());

    let o = cli(root.path(), &["--config", &config, "run-recipe", "regression-merged"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("rmse = "), "{out}");
    let run_id = out.split_whitespace().next().unwrap().to_string();
    assert!(run_id.starts_with("regression-merged-"));

    let o = cli(root.path(), &["list-runs"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains(&run_id));
    assert!(stdout(&o).contains(" done "));

    let o = cli(root.path(), &["show-run", &run_id]);
    assert_eq!(code(&o), 0);
    for stage in ["verify", "prepare", "train", "evaluate", "scatter"] {
        assert!(stdout(&o).contains(stage), "{stage} missing");
    }

    let png = root.path().join("fig.png");
    let o = cli(
        root.path(),
        &["report", "scatter", "--run", &run_id, "--out", png.to_str().unwrap()],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let img = image::open(&png).unwrap();
    assert_eq!((img.width(), img.height()), (1000, 1000));

    let table = root.path().join("table.txt");
    let o = cli(
        root.path(),
        &["report", "table", "--run", &run_id, "--out", table.to_str().unwrap()],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fs::read_to_string(table.with_extension("csv"))
        .unwrap()
        .starts_with("input,n,rmse,r2"));

    // A regression run has no confusion matrix.
    let o = cli(
        root.path(),
        &["report", "confusion", "--run", &run_id, "--out", "x.png"],
    );
    assert_eq!(code(&o), 3);

    let o = cli(
        root.path(),
        &[
            "--config",
            &config,
            "train",
            "--task",
            "classification",
            "--input",
            "pooled",
            "--epochs",
            "1",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("fbeta_score"));
}

#[test]
fn validation_errors_exit_2() {
    let root = tempfile::tempdir().unwrap();
    let bad = root.path().join("bad.toml");
    fs::write(&bad, "[train]\nepoch = 3\n").unwrap();
    assert_eq!(
        code(&cli(root.path(), &["--config", bad.to_str().unwrap(), "list-runs"])),
        2
    );
    assert_eq!(code(&cli(root.path(), &["run-recipe", "regression-everything"])), 2);
    assert_eq!(code(&cli(root.path(), &["show-run", "nope"])), 2);
    assert_eq!(code(&cli(root.path(), &["scrape"])), 2);
    assert_eq!(
        code(&cli(
            root.path(),
            &["train", "--task", "regression", "--input", "garages"]
        )),
        2
    );
    assert_eq!(code(&cli(root.path(), &["frobnicate"])), 2);
}

#[test]
fn missing_data_exits_4() {
    let root = tempfile::tempdir().unwrap();
    let config = tiny_config(root.path());
    let o = cli(root.path(), &["--config", &config, "run-recipe", "clf-uniform"]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(code(&cli(root.path(), &["preprocess"])), 4);
    let o = cli(root.path(), &["list-runs"]);
    assert!(stdout(&o).contains(" failed "), "{}", stdout(&o));
}

#[test]
fn stage_failures_exit_3() {
    let site = tempfile::tempdir().unwrap();
    write_fixture_site(site.path(), &fixture_households(12, 9), 8, 1).unwrap();
    let root = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&cli(
            root.path(),
            &["scrape", "--base-url", site.path().to_str().unwrap()]
        )),
        0
    );
    let config = root.path().join("broken.toml");
    fs::write(
        &config,
        TINY.replace("tile_px = 8", "tile_px = 8\nincome_table = \"/nonexistent/table.csv\""),
    )
    .unwrap();
    let o = cli(
        root.path(),
        &["--config", config.to_str().unwrap(), "run-recipe", "regression-roofs"],
    );
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("prepare"));
}
