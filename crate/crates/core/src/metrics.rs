//! SQuAD-style answer scoring and learning-curve aggregation.
//!
//! Normalization follows the SQuAD v1.1 evaluation rules: lowercase, drop
//! ASCII punctuation, drop the articles "a", "an", "the", collapse whitespace.

use std::collections::HashMap;
use std::io::Write;
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::backend::{decode_answer, Backend, ModelHandle};
use crate::dataset::Dataset;
use crate::{Error, Result};

fn articles() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b(a|an|the)\b").expect("static regex"))
}

pub fn normalize_answer(s: &str) -> String {
    let lowered = s.to_lowercase();
    let no_punct: String = lowered
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    let no_articles = articles().replace_all(&no_punct, " ");
    no_articles.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Token-overlap F1 in `[0, 1]` between normalized answers. Two empty answers
/// score 1; exactly one empty answer scores 0.
pub fn token_f1(pred: &str, gold: &str) -> f64 {
    let pred_norm = normalize_answer(pred);
    let gold_norm = normalize_answer(gold);
    let pred_toks: Vec<&str> = pred_norm.split_whitespace().collect();
    let gold_toks: Vec<&str> = gold_norm.split_whitespace().collect();
    match (pred_toks.is_empty(), gold_toks.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }

    let mut gold_counts: HashMap<&str, usize> = HashMap::new();
    for t in &gold_toks {
        *gold_counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &pred_toks {
        if let Some(c) = gold_counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred_toks.len() as f64;
    let recall = common as f64 / gold_toks.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

pub fn exact_match(pred: &str, gold: &str) -> u8 {
    u8::from(normalize_answer(pred) == normalize_answer(gold))
}

/// Mean F1 and exact match, both scaled to `[0, 100]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub f1: f64,
    pub em: f64,
    pub n_examples: usize,
}

/// Scores `(prediction, gold)` pairs.
pub fn score_predictions<'a, I>(pairs: I) -> Result<EvalResult>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let (mut f1, mut em, mut n) = (0.0, 0.0, 0usize);
    for (pred, gold) in pairs {
        f1 += token_f1(pred, gold);
        em += f64::from(exact_match(pred, gold));
        n += 1;
    }
    if n == 0 {
        return Err(Error::argument("cannot score an empty evaluation set"));
    }
    Ok(EvalResult {
        f1: 100.0 * f1 / n as f64,
        em: 100.0 * em / n as f64,
        n_examples: n,
    })
}

/// Decodes an answer for every instance of `eval_set` and scores it against
/// the gold answer.
pub fn evaluate(
    backend: &dyn Backend,
    model: &ModelHandle,
    eval_set: &Dataset,
    max_span_tokens: usize,
) -> Result<EvalResult> {
    if eval_set.is_empty() {
        return Err(Error::argument("cannot evaluate on an empty set"));
    }
    let predictions = eval_set
        .instances()
        .par_iter()
        .map(|inst| {
            let dist = backend
                .predict(model, &inst.question, &inst.context)
                .map_err(|e| Error::for_candidate(&inst.id, e))?;
            Ok(decode_answer(&dist, &inst.context, max_span_tokens)?.text)
        })
        .collect::<Result<Vec<String>>>()?;
    score_predictions(
        predictions
            .iter()
            .zip(eval_set.instances())
            .map(|(p, inst)| (p.as_str(), inst.answer_text.as_str())),
    )
}

/// F1 at successive checkpoints. Labels are strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    checkpoints: Vec<(u64, f64)>,
}

impl LearningCurve {
    pub fn new(checkpoints: Vec<(u64, f64)>) -> Result<Self> {
        if checkpoints.is_empty() {
            return Err(Error::argument("learning curve has no checkpoints"));
        }
        if checkpoints.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::argument(
                "learning curve labels must be strictly increasing",
            ));
        }
        Ok(Self { checkpoints })
    }

    pub fn checkpoints(&self) -> &[(u64, f64)] {
        &self.checkpoints
    }

    pub fn labels(&self) -> Vec<u64> {
        self.checkpoints.iter().map(|c| c.0).collect()
    }
}

/// Area under the learning curve, taken as the mean checkpoint F1. Only the
/// F1 values matter, not the checkpoint labels.
pub fn auc(curve: &LearningCurve) -> f64 {
    let cps = curve.checkpoints();
    cps.iter().map(|c| c.1).sum::<f64>() / cps.len() as f64
}

/// One-decimal display form used in reports.
pub fn format_auc(value: f64) -> String {
    format!("{value:.1}")
}

/// Writes the `checkpoint,f1,em` report.
pub fn write_eval_csv<W: Write>(rows: &[(u64, EvalResult)], mut out: W) -> Result<()> {
    writeln!(out, "checkpoint,f1,em")?;
    for (label, r) in rows {
        writeln!(out, "{label},{:.4},{:.4}", r.f1, r.em)?;
    }
    Ok(())
}

/// Writes a two-column whitespace-separated file for gnuplot.
pub fn write_curve_data<W: Write>(curve: &LearningCurve, mut out: W) -> Result<()> {
    writeln!(out, "# checkpoint f1")?;
    for (label, f1) in curve.checkpoints() {
        writeln!(out, "{label} {f1:.4}")?;
    }
    Ok(())
}
