//! The acquisition loop: seed a labeled set, then repeat fine-tune, acquire,
//! label and move until the unlabeled pool is empty.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use log::{info, warn};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{self, AcquisitionConfig, AcquisitionRequest, ScoredCandidate, Strategy};
use crate::backend::{Backend, DEFAULT_MAX_SPAN_TOKENS};
use crate::dataset::{oracle_label, Dataset, QAInstance};
use crate::metrics::{self, auc, EvalResult, LearningCurve};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    /// `batch_fraction` of the current unlabeled pool.
    Shrinking,
    /// `batch_fraction` of the initial pool size, every iteration.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Checkpoints {
    All,
    At(Vec<u64>),
}

impl Checkpoints {
    pub fn contains(&self, t: u64) -> bool {
        match self {
            Checkpoints::All => true,
            Checkpoints::At(ts) => ts.contains(&t),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ALConfig {
    pub strategy: Strategy,
    pub seed_fraction: f64,
    pub batch_fraction: f64,
    pub batch_mode: BatchMode,
    pub knn_k: usize,
    pub kmeans_k: usize,
    pub kmeans_max_iters: usize,
    pub rng_seed: u64,
    pub max_span_tokens: usize,
    pub eval_checkpoints: Checkpoints,
    /// Fraction of the dataset held out for evaluation. Zero evaluates on the
    /// whole dataset.
    pub eval_fraction: f64,
    /// Fine-tune on all of the labeled set each round instead of only the
    /// newly labeled batch.
    pub refeed_all: bool,
    /// Record wall-clock seconds per iteration. Off keeps logs byte-identical
    /// across replays.
    pub timing: bool,
}

impl Default for ALConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Pal,
            seed_fraction: 0.01,
            batch_fraction: 0.10,
            batch_mode: BatchMode::Shrinking,
            knn_k: 5,
            kmeans_k: 10,
            kmeans_max_iters: 100,
            rng_seed: 42,
            max_span_tokens: DEFAULT_MAX_SPAN_TOKENS,
            eval_checkpoints: Checkpoints::All,
            eval_fraction: 0.0,
            refeed_all: false,
            timing: false,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value for {key}: {value:?}")))
}

fn parse_switch(key: &str, value: &str, on: &str, off: &str) -> Result<bool> {
    match value {
        v if v == on || v == "true" => Ok(true),
        v if v == off || v == "false" => Ok(false),
        _ => Err(Error::Config(format!(
            "bad value for {key}: {value:?} (expected {on} or {off})"
        ))),
    }
}

impl ALConfig {
    /// Parses flat `key=value` lines. Blank lines and `#` comments are
    /// ignored; unspecified keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ALConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "strategy" => self.strategy = value.parse()?,
            "seed_fraction" => self.seed_fraction = parse_value(key, value)?,
            "batch_fraction" => self.batch_fraction = parse_value(key, value)?,
            "batch_mode" => {
                self.batch_mode = match value {
                    "shrinking" => BatchMode::Shrinking,
                    "constant" => BatchMode::Constant,
                    _ => return Err(Error::Config(format!("bad batch_mode {value:?}"))),
                }
            }
            "knn_k" => self.knn_k = parse_value(key, value)?,
            "kmeans_k" => self.kmeans_k = parse_value(key, value)?,
            "kmeans_max_iters" => self.kmeans_max_iters = parse_value(key, value)?,
            "rng_seed" => self.rng_seed = parse_value(key, value)?,
            "max_span_tokens" => self.max_span_tokens = parse_value(key, value)?,
            "eval_checkpoints" => {
                self.eval_checkpoints = if value == "all" {
                    Checkpoints::All
                } else if value.is_empty() || value == "none" {
                    Checkpoints::At(Vec::new())
                } else {
                    let mut ts = value
                        .split(',')
                        .map(|v| parse_value(key, v.trim()))
                        .collect::<Result<Vec<u64>>>()?;
                    ts.sort_unstable();
                    ts.dedup();
                    Checkpoints::At(ts)
                }
            }
            "eval_fraction" => self.eval_fraction = parse_value(key, value)?,
            "fine_tune_on" => self.refeed_all = parse_switch(key, value, "all", "new")?,
            "timing" => self.timing = parse_switch(key, value, "wall", "off")?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.seed_fraction > 0.0 && self.seed_fraction < 1.0) {
            return Err(Error::Config("seed_fraction must be in (0, 1)".into()));
        }
        if !(self.batch_fraction > 0.0 && self.batch_fraction <= 1.0) {
            return Err(Error::Config("batch_fraction must be in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.eval_fraction) {
            return Err(Error::Config("eval_fraction must be in [0, 1)".into()));
        }
        if self.knn_k == 0 || self.kmeans_k == 0 || self.max_span_tokens == 0 {
            return Err(Error::Config(
                "knn_k, kmeans_k and max_span_tokens must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Canonical `key=value` rendering; parsing it yields the same config.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let checkpoints = match &self.eval_checkpoints {
            Checkpoints::All => "all".to_string(),
            Checkpoints::At(ts) if ts.is_empty() => "none".to_string(),
            Checkpoints::At(ts) => ts.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
        };
        let _ = writeln!(s, "strategy={}", self.strategy);
        let _ = writeln!(s, "seed_fraction={}", self.seed_fraction);
        let _ = writeln!(s, "batch_fraction={}", self.batch_fraction);
        let _ = writeln!(
            s,
            "batch_mode={}",
            match self.batch_mode {
                BatchMode::Shrinking => "shrinking",
                BatchMode::Constant => "constant",
            }
        );
        let _ = writeln!(s, "knn_k={}", self.knn_k);
        let _ = writeln!(s, "kmeans_k={}", self.kmeans_k);
        let _ = writeln!(s, "kmeans_max_iters={}", self.kmeans_max_iters);
        let _ = writeln!(s, "rng_seed={}", self.rng_seed);
        let _ = writeln!(s, "max_span_tokens={}", self.max_span_tokens);
        let _ = writeln!(s, "eval_checkpoints={checkpoints}");
        let _ = writeln!(s, "eval_fraction={}", self.eval_fraction);
        let _ = writeln!(
            s,
            "fine_tune_on={}",
            if self.refeed_all { "all" } else { "new" }
        );
        let _ = writeln!(s, "timing={}", if self.timing { "wall" } else { "off" });
        s
    }

    pub fn acquisition(&self) -> AcquisitionConfig {
        AcquisitionConfig {
            knn_k: self.knn_k,
            kmeans_k: self.kmeans_k,
            kmeans_max_iters: self.kmeans_max_iters,
            max_span_tokens: self.max_span_tokens,
        }
    }
}

/// Labeled and unlabeled ids plus the iteration counter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolState {
    labeled: Vec<String>,
    unlabeled: Vec<String>,
    t: u64,
}

impl PoolState {
    pub fn labeled(&self) -> &[String] {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &[String] {
        &self.unlabeled
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    /// Moves `selected` from the unlabeled to the labeled set and advances `t`.
    pub fn advance(&mut self, selected: &[String]) -> Result<()> {
        let picked: HashSet<&str> = selected.iter().map(String::as_str).collect();
        if picked.len() != selected.len() {
            return Err(Error::argument("selection contains duplicate ids"));
        }
        let before = self.unlabeled.len();
        self.unlabeled.retain(|id| !picked.contains(id.as_str()));
        if before - self.unlabeled.len() != selected.len() {
            return Err(Error::argument(
                "selection contains ids outside the unlabeled pool",
            ));
        }
        self.labeled.extend(selected.iter().cloned());
        self.t += 1;
        Ok(())
    }
}

/// Draws the initial labeled set: `max(1, round(seed_fraction * N))` ids
/// sampled uniformly with the configured seed. Both sets keep dataset order.
pub fn seed_pool(dataset: &Dataset, cfg: &ALConfig) -> Result<PoolState> {
    let n = dataset.len();
    if n == 0 {
        return Err(Error::argument("cannot seed an empty dataset"));
    }
    let count = ((cfg.seed_fraction * n as f64).round() as usize).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut chosen = sample(&mut rng, n, count).into_vec();
    chosen.sort_unstable();
    let chosen_set: HashSet<usize> = chosen.iter().copied().collect();

    let ids: Vec<&str> = dataset.ids().collect();
    Ok(PoolState {
        labeled: chosen.iter().map(|&i| ids[i].to_string()).collect(),
        unlabeled: (0..n)
            .filter(|i| !chosen_set.contains(i))
            .map(|i| ids[i].to_string())
            .collect(),
        t: 0,
    })
}

/// Number of instances to acquire this round, in `[1, |unlabeled|]`.
pub fn batch_size(pool: &PoolState, cfg: &ALConfig, pool_size: usize) -> usize {
    let remaining = pool.unlabeled.len();
    let base = match cfg.batch_mode {
        BatchMode::Shrinking => remaining,
        BatchMode::Constant => pool_size,
    };
    // The small epsilon keeps e.g. 0.1 * 990 from rounding up to 100.
    let b = (cfg.batch_fraction * base as f64 - 1e-9).ceil().max(1.0) as usize;
    b.min(remaining).max(1)
}

/// Per-round seed so strategies draw fresh randomness each iteration.
fn round_seed(seed: u64, t: u64) -> u64 {
    let mut z = seed ^ t.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: u64,
    pub strategy: Strategy,
    /// Set when the configured strategy could not run and least confidence
    /// was used instead.
    pub fallback_from: Option<Strategy>,
    pub baseline_control: bool,
    pub batch_size: usize,
    pub selected: Vec<ScoredCandidate>,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub eval: Option<EvalResult>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogLine {
    Iteration(IterationRecord),
    Summary {
        iterations: usize,
        checkpoints: Vec<u64>,
        auc: Option<f64>,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentLog {
    pub records: Vec<IterationRecord>,
}

impl ExperimentLog {
    pub fn learning_curve(&self) -> Option<LearningCurve> {
        let points: Vec<(u64, f64)> = self
            .records
            .iter()
            .filter_map(|r| r.eval.map(|e| (r.t, e.f1)))
            .collect();
        LearningCurve::new(points).ok()
    }

    pub fn auc(&self) -> Option<f64> {
        self.learning_curve().as_ref().map(auc)
    }

    pub fn eval_rows(&self) -> Vec<(u64, EvalResult)> {
        self.records
            .iter()
            .filter_map(|r| r.eval.map(|e| (r.t, e)))
            .collect()
    }

    pub fn summary_line(&self) -> LogLine {
        LogLine::Summary {
            iterations: self.records.len(),
            checkpoints: self.eval_rows().iter().map(|r| r.0).collect(),
            auc: self.auc(),
        }
    }

    /// One JSON object per iteration, then a summary object.
    pub fn write_ndjson<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            write_log_line(&LogLine::Iteration(r.clone()), &mut out)?;
        }
        write_log_line(&self.summary_line(), &mut out)
    }

    /// Columns `t,n_labeled,n_unlabeled,f1,em,seconds`; f1/em are empty for
    /// iterations without evaluation.
    pub fn write_summary_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,n_labeled,n_unlabeled,f1,em,seconds")?;
        for r in &self.records {
            let (f1, em) = r.eval.map_or((String::new(), String::new()), |e| {
                (format!("{:.4}", e.f1), format!("{:.4}", e.em))
            });
            writeln!(
                out,
                "{},{},{},{},{},{:.3}",
                r.t, r.n_labeled, r.n_unlabeled, f1, em, r.seconds
            )?;
        }
        Ok(())
    }
}

pub fn write_log_line<W: Write>(line: &LogLine, mut out: W) -> Result<()> {
    serde_json::to_writer(&mut out, line)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn split_eval(dataset: &Dataset, cfg: &ALConfig) -> Result<(Dataset, Dataset)> {
    if cfg.eval_fraction == 0.0 {
        return Ok((dataset.clone(), dataset.clone()));
    }
    let n = dataset.len();
    let n_eval = ((cfg.eval_fraction * n as f64).round() as usize).clamp(1, n.saturating_sub(1));
    if n_eval == 0 {
        return Err(Error::Config(
            "dataset too small to hold out an evaluation set".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ 0xE7A1);
    let held: HashSet<usize> = sample(&mut rng, n, n_eval).into_iter().collect();
    let (mut pool, mut eval) = (Vec::new(), Vec::new());
    for (i, inst) in dataset.instances().iter().enumerate() {
        if held.contains(&i) {
            eval.push(inst.clone());
        } else {
            pool.push(inst.clone());
        }
    }
    Ok((Dataset::new(pool)?, Dataset::new(eval)?))
}

fn labeled_instances(dataset: &Dataset, ids: &[String]) -> Result<Vec<QAInstance>> {
    ids.iter()
        .map(|id| {
            let gold = oracle_label(id, dataset)?;
            let inst = dataset.require(id)?;
            Ok(QAInstance {
                answer_text: gold.text,
                answer_start: gold.char_start,
                ..inst.clone()
            })
        })
        .collect()
}

/// Runs the loop and returns the full log.
pub fn run_experiment(
    dataset: &Dataset,
    cfg: &ALConfig,
    backend: &mut dyn Backend,
) -> Result<ExperimentLog> {
    run_experiment_with(dataset, cfg, backend, |_| Ok(()))
}

/// Runs the loop, handing each completed iteration to `on_record` as soon as
/// it finishes. If an iteration fails, every earlier iteration has already
/// been delivered and the error carries the failing iteration index.
pub fn run_experiment_with<F>(
    dataset: &Dataset,
    cfg: &ALConfig,
    backend: &mut dyn Backend,
    mut on_record: F,
) -> Result<ExperimentLog>
where
    F: FnMut(&IterationRecord) -> Result<()>,
{
    cfg.validate()?;
    let (pool_set, eval_set) = split_eval(dataset, cfg)?;
    let mut pool = seed_pool(&pool_set, cfg)?;
    let pool_size = pool_set.len();
    let acq = cfg.acquisition();
    let mut model = backend.handle()?;
    let mut newly_labeled: Vec<String> = pool.labeled.clone();
    let mut log = ExperimentLog::default();

    info!(
        "seeded {} labeled / {} unlabeled; strategy {}",
        pool.labeled.len(),
        pool.unlabeled.len(),
        cfg.strategy
    );

    while !pool.unlabeled.is_empty() {
        let t = pool.t;
        let at = |e: Error| Error::Iteration {
            t,
            source: Box::new(e),
        };
        let clock = Instant::now();

        let train_ids = if cfg.refeed_all {
            &pool.labeled
        } else {
            &newly_labeled
        };
        let batch = labeled_instances(&pool_set, train_ids).map_err(at)?;
        model = backend.fine_tune(&model, &batch).map_err(at)?;

        let b = batch_size(&pool, cfg, pool_size);
        let req = AcquisitionRequest {
            dataset: &pool_set,
            labeled_ids: &pool.labeled,
            unlabeled_ids: &pool.unlabeled,
            batch_size: b,
            model: &model,
            rng_seed: round_seed(cfg.rng_seed, t),
        };
        let (strategy, fallback_from, selected) =
            match acquisition::select(cfg.strategy, &*backend, &req, &acq) {
                Ok(sel) => (cfg.strategy, None, sel),
                Err(Error::PalStarved { scored, needed }) => {
                    warn!("t={t}: PAL scored {scored}/{needed}; falling back to least confidence");
                    let sel = acquisition::select(Strategy::Confidence, &*backend, &req, &acq)
                        .map_err(at)?;
                    (Strategy::Confidence, Some(cfg.strategy), sel)
                }
                Err(e) => return Err(at(e)),
            };

        let ids: Vec<String> = selected.iter().map(|c| c.id.clone()).collect();
        if ids.len() != b {
            return Err(at(Error::argument(format!(
                "strategy returned {} ids, expected {b}",
                ids.len()
            ))));
        }
        pool.advance(&ids).map_err(at)?;

        let eval = if cfg.eval_checkpoints.contains(t) {
            Some(metrics::evaluate(&*backend, &model, &eval_set, cfg.max_span_tokens).map_err(at)?)
        } else {
            None
        };

        let record = IterationRecord {
            t,
            strategy,
            fallback_from,
            baseline_control: strategy.is_baseline(),
            batch_size: b,
            selected,
            n_labeled: pool.labeled.len(),
            n_unlabeled: pool.unlabeled.len(),
            eval,
            seconds: if cfg.timing {
                clock.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        info!(
            "t={t} acquired {b} ({} labeled, {} left){}",
            record.n_labeled,
            record.n_unlabeled,
            record
                .eval
                .map(|e| format!(" f1={:.2} em={:.2}", e.f1, e.em))
                .unwrap_or_default()
        );
        on_record(&record)?;
        log.records.push(record);
        newly_labeled = ids;
    }
    Ok(log)
}
