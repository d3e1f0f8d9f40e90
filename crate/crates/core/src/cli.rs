//! Command-line front end: `run`, `compare`, `serve` and `synth-data`.
//!
//! Progress goes to stderr through `log`; machine-readable output goes to
//! files only.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;

use crate::acquisition::Strategy;
use crate::alloop::{run_experiment_with, write_log_line, ALConfig, LogLine};
use crate::backend::{connect, wire, BackendSpec, SyntheticBackend};
use crate::dataset::{parse_squad, read_dump, subset_one_per_context, to_squad_json, Dataset};
use crate::metrics::{auc, format_auc, write_curve_data, write_eval_csv, LearningCurve};
use crate::{synthdata, Error};

pub const CONFIG_FILE: &str = "config.txt";
pub const LOG_FILE: &str = "log.ndjson";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const CURVE_FILE: &str = "curve.dat";

#[derive(Debug, Parser)]
#[command(
    name = "palqa",
    version,
    about = "Pool-based active learning for extractive QA"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one active-learning experiment.
    Run(RunArgs),
    /// Tabulate F1 per checkpoint and AUC across finished runs.
    Compare(CompareArgs),
    /// Serve the synthetic backend over the wire protocol.
    Serve(ServeArgs),
    /// Write a seeded synthetic SQuAD-format dataset.
    SynthData(SynthDataArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// key=value experiment config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// SQuAD v1.1 JSON, or a `.tsv` dump.
    #[arg(long)]
    pub dataset: PathBuf,
    /// synthetic:<seed>, wire:cmd:<command> or wire:tcp:<host:port>.
    #[arg(long, default_value = "synthetic:0")]
    pub backend: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `strategy` from the config.
    #[arg(long)]
    pub strategy: Option<String>,
    /// Overrides `rng_seed` from the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
    /// Run output directories.
    #[arg(required = true, num_args = 2..)]
    pub runs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "synthetic:0")]
    pub backend: String,
    /// host:port to listen on; stdio when omitted.
    #[arg(long)]
    pub listen: Option<String>,
}

#[derive(Debug, Args)]
pub struct SynthDataArgs {
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Process exit codes, one per failure class.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const IO: i32 = 3;
    pub const DATA: i32 = 4;
    pub const CONFIG: i32 = 5;
    pub const BACKEND: i32 = 6;
    pub const RUN: i32 = 7;
    pub const MISMATCH: i32 = 8;
}

fn classify(e: &Error) -> i32 {
    match e {
        Error::Parse { .. } | Error::Validation { .. } | Error::UnknownId(_) => exit::DATA,
        Error::Config(_) => exit::CONFIG,
        Error::Transport(_)
        | Error::Protocol(_)
        | Error::Backend(_)
        | Error::StaleHandle { .. } => exit::BACKEND,
        Error::CheckpointMismatch(_) => exit::MISMATCH,
        Error::Io(_) => exit::IO,
        Error::Candidate { source, .. } | Error::Iteration { source, .. } => classify(source),
        _ => exit::RUN,
    }
}

/// Maps an error chain to an exit code: the outermost crate error wins, then
/// plain I/O errors.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if let Some(e) = err.chain().find_map(|c| c.downcast_ref::<Error>()) {
        return classify(e);
    }
    if err.chain().any(|c| c.downcast_ref::<io::Error>().is_some()) {
        return exit::IO;
    }
    exit::RUN
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Compare(args) => cmd_compare(&args),
        Command::Serve(args) => cmd_serve(&args),
        Command::SynthData(args) => cmd_synth_data(&args),
    }
}

/// Loads SQuAD JSON, or the tab-separated dump when the extension is `.tsv`.
pub fn load_dataset(path: &Path) -> anyhow::Result<Dataset> {
    let raw = fs::read(path).with_context(|| format!("cannot read dataset {}", path.display()))?;
    let dataset = if path.extension().is_some_and(|e| e == "tsv") {
        read_dump(raw.as_slice())
    } else {
        parse_squad(&raw)
    };
    dataset.with_context(|| format!("cannot load dataset {}", path.display()))
}

fn load_config(args: &RunArgs) -> anyhow::Result<ALConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))?;
            ALConfig::parse(&text).with_context(|| format!("in config {}", path.display()))?
        }
        None => ALConfig::default(),
    };
    if let Some(s) = &args.strategy {
        cfg.strategy = s.parse()?;
    }
    if let Some(seed) = args.seed {
        cfg.rng_seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

pub fn cmd_run(args: &RunArgs) -> anyhow::Result<()> {
    let cfg = load_config(args)?;
    let spec: BackendSpec = args.backend.parse()?;
    let full = load_dataset(&args.dataset)?;
    let dataset = subset_one_per_context(&full);
    info!(
        "loaded {} instances ({} after keeping one per context)",
        full.len(),
        dataset.len()
    );

    fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create output directory {}", args.out.display()))?;
    let mut echo = create(&args.out, CONFIG_FILE)?;
    writeln!(echo, "# dataset {}", args.dataset.display())?;
    writeln!(echo, "# backend {spec}")?;
    echo.write_all(cfg.to_config_string().as_bytes())?;
    echo.flush()?;

    let mut backend = connect(&spec).with_context(|| format!("cannot start backend {spec}"))?;
    let mut log = create(&args.out, LOG_FILE)?;
    let result = run_experiment_with(&dataset, &cfg, backend.as_mut(), |record| {
        write_log_line(&LogLine::Iteration(record.clone()), &mut log)
    });
    let experiment = result.with_context(|| {
        format!(
            "experiment failed; completed iterations are in {}",
            args.out.join(LOG_FILE).display()
        )
    })?;
    write_log_line(&experiment.summary_line(), &mut log)?;
    log.flush()?;

    let mut summary = create(&args.out, SUMMARY_FILE)?;
    experiment.write_summary_csv(&mut summary)?;
    summary.flush()?;

    let mut eval = create(&args.out, EVAL_FILE)?;
    write_eval_csv(&experiment.eval_rows(), &mut eval)?;
    eval.flush()?;

    let mut curve_out = create(&args.out, CURVE_FILE)?;
    match experiment.learning_curve() {
        Some(curve) => {
            write_curve_data(&curve, &mut curve_out)?;
            info!("{} auc={}", cfg.strategy, format_auc(auc(&curve)));
        }
        None => writeln!(curve_out, "# checkpoint f1")?,
    }
    curve_out.flush()?;
    info!(
        "{} iterations written to {}",
        experiment.records.len(),
        args.out.display()
    );
    Ok(())
}

/// Reads the strategy and learning curve of a finished run directory.
pub fn load_run(dir: &Path) -> anyhow::Result<(Strategy, LearningCurve)> {
    let cfg_path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&cfg_path)
        .with_context(|| format!("cannot read {}", cfg_path.display()))?;
    let cfg = ALConfig::parse(&text).with_context(|| format!("in {}", cfg_path.display()))?;

    let eval_path = dir.join(EVAL_FILE);
    let eval = fs::read_to_string(&eval_path)
        .with_context(|| format!("cannot read {}", eval_path.display()))?;
    let mut points = Vec::new();
    for (n, line) in eval.lines().enumerate().skip(1) {
        let mut cols = line.split(',');
        let parsed = (|| {
            let label = cols.next()?.trim().parse::<u64>().ok()?;
            let f1 = cols.next()?.trim().parse::<f64>().ok()?;
            Some((label, f1))
        })();
        points.push(parsed.ok_or_else(|| {
            anyhow!(
                "{}: malformed line {}: {line:?}",
                eval_path.display(),
                n + 1
            )
        })?);
    }
    let curve = LearningCurve::new(points)
        .with_context(|| format!("{} has no usable checkpoints", eval_path.display()))?;
    Ok((cfg.strategy, curve))
}

/// Renders the comparison table: `strategy,<checkpoint labels...>,auc`, one
/// row per run, values to one decimal.
pub fn comparison_table(runs: &[(String, LearningCurve)]) -> crate::Result<String> {
    let Some((_, first)) = runs.first() else {
        return Err(Error::Argument("nothing to compare".into()));
    };
    let grid = first.labels();
    if runs.iter().any(|(_, c)| c.labels() != grid) {
        let grids: Vec<String> = runs
            .iter()
            .map(|(name, c)| format!("{name}: {:?}", c.labels()))
            .collect();
        return Err(Error::CheckpointMismatch(grids.join("; ")));
    }
    let mut out = String::from("strategy");
    for label in &grid {
        out.push_str(&format!(",{label}"));
    }
    out.push_str(",auc\n");
    for (name, curve) in runs {
        out.push_str(name);
        for (_, f1) in curve.checkpoints() {
            out.push_str(&format!(",{f1:.1}"));
        }
        out.push_str(&format!(",{}\n", format_auc(auc(curve))));
    }
    Ok(out)
}

pub fn cmd_compare(args: &CompareArgs) -> anyhow::Result<()> {
    if args.runs.len() < 2 {
        bail!("compare needs at least two run directories");
    }
    let runs = args
        .runs
        .iter()
        .map(|dir| load_run(dir).map(|(s, c)| (s.to_string(), c)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let table = comparison_table(&runs)?;
    fs::write(&args.out, table).with_context(|| format!("cannot write {}", args.out.display()))?;
    info!("compared {} runs into {}", runs.len(), args.out.display());
    Ok(())
}

pub fn cmd_serve(args: &ServeArgs) -> anyhow::Result<()> {
    let seed = match args.backend.parse()? {
        BackendSpec::Synthetic { seed } => seed,
        other => bail!("serve only hosts the synthetic backend, got {other}"),
    };
    let mut backend = SyntheticBackend::with_seed(seed);
    match &args.listen {
        Some(addr) => wire::serve_tcp(&mut backend, addr.as_str())?,
        None => {
            let stdin = io::stdin();
            wire::serve(
                &mut backend,
                BufReader::new(stdin.lock()),
                io::stdout().lock(),
            )?
        }
    }
    Ok(())
}

pub fn cmd_synth_data(args: &SynthDataArgs) -> anyhow::Result<()> {
    let dataset = synthdata::generate(args.n, args.seed)?;
    fs::write(&args.out, to_squad_json(&dataset)?)
        .with_context(|| format!("cannot write {}", args.out.display()))?;
    info!(
        "wrote {} instances to {}",
        dataset.len(),
        args.out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(labels: &[u64], f1: &[f64]) -> LearningCurve {
        LearningCurve::new(labels.iter().copied().zip(f1.iter().copied()).collect()).unwrap()
    }

    #[test]
    fn table_shape() {
        let runs = vec![
            ("a".to_string(), curve(&[0, 1], &[10.0, 20.0])),
            ("b".to_string(), curve(&[0, 1], &[30.0, 30.25])),
        ];
        assert_eq!(
            comparison_table(&runs).unwrap(),
            "strategy,0,1,auc\na,10.0,20.0,15.0\nb,30.0,30.2,30.1\n"
        );
    }

    #[test]
    fn mismatched_grids_are_listed() {
        let runs = vec![
            ("a".to_string(), curve(&[0, 1], &[1.0, 2.0])),
            ("b".to_string(), curve(&[0, 2], &[1.0, 2.0])),
        ];
        let err = comparison_table(&runs).unwrap_err();
        assert!(matches!(err, Error::CheckpointMismatch(_)));
        assert!(err.to_string().contains("[0, 2]"));
    }

    #[test]
    fn exit_codes_are_distinct_per_class() {
        let cfg = anyhow::Error::from(Error::Config("x".into()));
        let backend = anyhow::Error::from(Error::Iteration {
            t: 3,
            source: Box::new(Error::Transport("down".into())),
        });
        let io = anyhow::Error::from(io::Error::from(io::ErrorKind::NotFound)).context("reading");
        assert_eq!(exit_code(&cfg), exit::CONFIG);
        assert_eq!(exit_code(&backend), exit::BACKEND);
        assert_eq!(exit_code(&io), exit::IO);
    }
}
