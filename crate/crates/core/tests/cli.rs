use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use palqa::cli::exit;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_palqa");

fn tiny() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/tiny_squad.json")
}

fn palqa(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn run_into(out: &Path, strategy: &str, backend: &str, extra: &[&str]) -> Output {
    let dataset = tiny();
    let mut args = vec![
        "run",
        "--dataset",
        dataset.to_str().unwrap(),
        "--backend",
        backend,
        "--out",
        out.to_str().unwrap(),
        "--strategy",
        strategy,
    ];
    args.extend_from_slice(extra);
    palqa(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_outputs() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("pal");
    let o = run_into(&out, "pal", "synthetic:3", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [
        "log.ndjson",
        "summary.csv",
        "curve.dat",
        "eval.csv",
        "config.txt",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let config = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(config.contains("strategy=pal"));
    assert!(config.contains("# backend synthetic:3"));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("t,n_labeled,n_unlabeled,f1,em,seconds\n"));
    let log = fs::read_to_string(out.join("log.ndjson")).unwrap();
    assert!(log
        .lines()
        .last()
        .unwrap()
        .contains("\"record\":\"summary\""));
}

#[test]
fn replayed_runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run_into(&a, "clustering", "synthetic:3", &["--seed", "9"])
        .status
        .success());
    assert!(run_into(&b, "clustering", "synthetic:3", &["--seed", "9"])
        .status
        .success());
    for f in ["summary.csv", "log.ndjson", "eval.csv", "curve.dat"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn missing_dataset_names_the_path() {
    let dir = TempDir::new().unwrap();
    let o = palqa(&[
        "run",
        "--dataset",
        "/nonexistent/squad.json",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(exit::IO));
    assert!(
        stderr(&o).contains("/nonexistent/squad.json"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn failures_have_distinct_exit_codes() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("o");

    let bad_cfg = dir.path().join("bad.cfg");
    fs::write(&bad_cfg, "batch_fraction=2\n").unwrap();
    let o = run_into(
        &out,
        "pal",
        "synthetic:3",
        &["--config", bad_cfg.to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(exit::CONFIG), "{}", stderr(&o));

    let o = run_into(&out, "entropy", "synthetic:3", &[]);
    assert_eq!(o.status.code(), Some(exit::CONFIG), "{}", stderr(&o));

    let broken = dir.path().join("broken.json");
    fs::write(&broken, "{\"data\": [").unwrap();
    let o = palqa(&[
        "run",
        "--dataset",
        broken.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(exit::DATA), "{}", stderr(&o));

    let o = run_into(&out, "pal", "wire:tcp:127.0.0.1:1", &[]);
    assert_eq!(o.status.code(), Some(exit::BACKEND), "{}", stderr(&o));
    assert!(stderr(&o).contains("127.0.0.1:1"));
}

#[test]
fn run_over_spawned_wire_adapter_matches_in_process() {
    let dir = TempDir::new().unwrap();
    let (direct, wired) = (dir.path().join("direct"), dir.path().join("wired"));
    assert!(run_into(&direct, "pal", "synthetic:3", &[])
        .status
        .success());
    let spec = format!("wire:cmd:{BIN} serve --backend synthetic:3");
    let o = run_into(&wired, "pal", &spec, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["summary.csv", "log.ndjson"] {
        assert_eq!(
            fs::read(direct.join(f)).unwrap(),
            fs::read(wired.join(f)).unwrap(),
            "{f}"
        );
    }
}

fn fake_run(dir: &Path, strategy: &str, rows: &[(u64, f64)]) -> PathBuf {
    let d = dir.join(strategy);
    fs::create_dir_all(&d).unwrap();
    fs::write(d.join("config.txt"), format!("strategy={strategy}\n")).unwrap();
    let mut eval = String::from("checkpoint,f1,em\n");
    for (c, f) in rows {
        eval.push_str(&format!("{c},{f},0\n"));
    }
    fs::write(d.join("eval.csv"), eval).unwrap();
    d
}

#[test]
fn compare_reproduces_published_aucs() {
    let dir = TempDir::new().unwrap();
    let rows = |v: [f64; 7]| -> Vec<(u64, f64)> {
        (0..7).map(|i| (200 + 100 * i, v[i as usize])).collect()
    };
    let runs = [
        fake_run(
            dir.path(),
            "confidence",
            &rows([52.4, 66.5, 71.7, 74.8, 77.2, 77.5, 79.0]),
        ),
        fake_run(
            dir.path(),
            "clustering",
            &rows([53.6, 67.1, 68.4, 73.6, 76.3, 76.5, 77.7]),
        ),
        fake_run(
            dir.path(),
            "diversity",
            &rows([50.4, 65.7, 71.4, 71.6, 75.6, 74.7, 78.2]),
        ),
        fake_run(
            dir.path(),
            "pal",
            &rows([57.7, 70.1, 72.6, 74.1, 76.2, 78.5, 79.9]),
        ),
    ];
    let table = dir.path().join("table.csv");
    let mut args = vec!["compare", "--out", table.to_str().unwrap()];
    args.extend(runs.iter().map(|p| p.to_str().unwrap()));
    let o = palqa(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&table).unwrap();
    let aucs: Vec<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap())
        .collect();
    assert_eq!(
        text.lines().next().unwrap(),
        "strategy,200,300,400,500,600,700,800,auc"
    );
    assert_eq!(aucs, ["71.3", "70.5", "69.7", "72.7"]);
}

#[test]
fn compare_rejects_mismatched_grids() {
    let dir = TempDir::new().unwrap();
    let a = fake_run(dir.path(), "confidence", &[(0, 1.0), (1, 2.0)]);
    let b = fake_run(dir.path(), "pal", &[(0, 1.0), (2, 2.0)]);
    let out = dir.path().join("t.csv");
    let o = palqa(&[
        "compare",
        "--out",
        out.to_str().unwrap(),
        a.to_str().unwrap(),
        b.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(exit::MISMATCH));
    let msg = stderr(&o);
    assert!(msg.contains("[0, 1]") && msg.contains("[0, 2]"), "{msg}");
    assert!(!out.exists());
}

#[test]
fn synth_data_round_trips_through_run() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("d.json");
    let o = palqa(&[
        "synth-data",
        "--n",
        "25",
        "--seed",
        "4",
        "--out",
        data.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let out = dir.path().join("r");
    let o = palqa(&[
        "run",
        "--dataset",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--strategy",
        "random",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}
