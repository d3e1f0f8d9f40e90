//! Model backend contract and span decoding.
//!
//! A backend provides three things to the engine: text embeddings, start/end
//! span distributions over context tokens, and warm-start fine-tuning. Every
//! [`SpanDistribution`] carries its own token offsets so the engine never
//! needs to know which tokenizer produced it.

mod synthetic;
pub mod wire;

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::QAInstance;
use crate::text::char_slice;
use crate::{Error, Result};

pub use synthetic::{SyntheticBackend, SyntheticConfig};

/// Default maximum answer length, in tokens, for [`decode_answer`].
pub const DEFAULT_MAX_SPAN_TOKENS: usize = 30;

/// Tolerance on the unit sum of each probability vector.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

/// Fixed-length text representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::argument("embedding has no dimensions"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::argument("embedding has non-finite entries"));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn cosine(&self, other: &Embedding) -> f64 {
        let dot: f64 = self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum();
        let na = self.0.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nb = other.0.iter().map(|b| b * b).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Per-token start and end probabilities over a context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanDistribution {
    start_probs: Vec<f64>,
    end_probs: Vec<f64>,
    token_offsets: Vec<(usize, usize)>,
}

impl SpanDistribution {
    /// Validates lengths, normalization and offset ordering.
    pub fn new(
        start_probs: Vec<f64>,
        end_probs: Vec<f64>,
        token_offsets: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let n = token_offsets.len();
        if n == 0 {
            return Err(Error::argument("span distribution over zero tokens"));
        }
        if start_probs.len() != n || end_probs.len() != n {
            return Err(Error::argument(format!(
                "length mismatch: {} start, {} end, {} offsets",
                start_probs.len(),
                end_probs.len(),
                n
            )));
        }
        for (name, probs) in [("start", &start_probs), ("end", &end_probs)] {
            if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::argument(format!(
                    "{name} probabilities must be finite and non-negative"
                )));
            }
            let sum: f64 = probs.iter().sum();
            if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
                return Err(Error::argument(format!(
                    "{name} probabilities sum to {sum}"
                )));
            }
        }
        let mut prev_end = 0;
        for &(s, e) in &token_offsets {
            if s > e || s < prev_end {
                return Err(Error::argument(format!(
                    "token offsets not ascending/non-overlapping at ({s}, {e})"
                )));
            }
            prev_end = e;
        }
        Ok(Self {
            start_probs,
            end_probs,
            token_offsets,
        })
    }

    pub fn start_probs(&self) -> &[f64] {
        &self.start_probs
    }

    pub fn end_probs(&self) -> &[f64] {
        &self.end_probs
    }

    pub fn token_offsets(&self) -> &[(usize, usize)] {
        &self.token_offsets
    }

    pub fn len(&self) -> usize {
        self.token_offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_offsets.is_empty()
    }
}

/// Identifies a model state. `t` counts completed fine-tuning rounds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelHandle {
    pub backend: String,
    pub t: u64,
    pub dim: usize,
}

/// A decoded answer span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerSpan {
    pub token_start: usize,
    pub token_end: usize,
    pub score: f64,
    pub text: String,
}

/// The model contract.
///
/// `embed` and `predict` take `&self` and may be called concurrently;
/// `fine_tune` takes `&mut self`, so the borrow checker enforces that it never
/// overlaps any other call on the same backend.
pub trait Backend: Send + Sync {
    /// Handle for the current model state.
    fn handle(&self) -> Result<ModelHandle>;

    fn embed(&self, model: &ModelHandle, text: &str) -> Result<Embedding>;

    fn predict(
        &self,
        model: &ModelHandle,
        question: &str,
        context: &str,
    ) -> Result<SpanDistribution>;

    /// Continues training from `model` on `labeled` and returns the handle
    /// for the new state (`t + 1`). On failure the old handle stays valid.
    fn fine_tune(&mut self, model: &ModelHandle, labeled: &[QAInstance]) -> Result<ModelHandle>;
}

/// Picks the span maximizing `start_probs[i] + end_probs[j]` over
/// `i <= j < i + max_span_tokens`. Ties go to the smaller `i`, then the
/// smaller `j`.
pub fn decode_answer(
    dist: &SpanDistribution,
    context: &str,
    max_span_tokens: usize,
) -> Result<AnswerSpan> {
    if max_span_tokens == 0 {
        return Err(Error::argument("max_span_tokens must be >= 1"));
    }
    let start = dist.start_probs();
    let end = dist.end_probs();

    // Sliding-window maximum over start probabilities. The deque holds
    // indices with strictly decreasing start values, so its front is the
    // leftmost maximum of the window.
    let mut window = std::collections::VecDeque::with_capacity(max_span_tokens);
    let mut best: Option<(f64, usize, usize)> = None;
    for j in 0..start.len() {
        while window.back().is_some_and(|&b| start[b] < start[j]) {
            window.pop_back();
        }
        window.push_back(j);
        while window.front().is_some_and(|&f| f + max_span_tokens <= j) {
            window.pop_front();
        }
        let i = *window.front().expect("window holds j");
        let score = start[i] + end[j];
        let better = match best {
            None => true,
            Some((bs, bi, _)) => score > bs || (score == bs && i < bi),
        };
        if better {
            best = Some((score, i, j));
        }
    }

    let (score, i, j) = best.expect("distribution has at least one token");
    let offsets = dist.token_offsets();
    Ok(AnswerSpan {
        token_start: i,
        token_end: j,
        score,
        text: char_slice(context, offsets[i].0, offsets[j].1).to_string(),
    })
}

/// Parsed form of a `--backend` spec.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    /// `synthetic:<seed>`
    Synthetic { seed: u64 },
    /// `wire:cmd:<command>`
    WireCommand(String),
    /// `wire:tcp:<host:port>`
    WireTcp(String),
}

impl FromStr for BackendSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(seed) = s.strip_prefix("synthetic:") {
            let seed = seed
                .parse()
                .map_err(|_| Error::argument(format!("bad synthetic seed in {s:?}")))?;
            return Ok(BackendSpec::Synthetic { seed });
        }
        if let Some(cmd) = s.strip_prefix("wire:cmd:") {
            if cmd.trim().is_empty() {
                return Err(Error::argument("wire:cmd: needs a command"));
            }
            return Ok(BackendSpec::WireCommand(cmd.to_string()));
        }
        if let Some(addr) = s.strip_prefix("wire:tcp:") {
            if addr.trim().is_empty() {
                return Err(Error::argument("wire:tcp: needs host:port"));
            }
            return Ok(BackendSpec::WireTcp(addr.to_string()));
        }
        Err(Error::argument(format!(
            "unrecognised backend spec {s:?}; expected synthetic:<seed>, wire:cmd:<command> or wire:tcp:<host:port>"
        )))
    }
}

impl std::fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BackendSpec::Synthetic { seed } => write!(f, "synthetic:{seed}"),
            BackendSpec::WireCommand(c) => write!(f, "wire:cmd:{c}"),
            BackendSpec::WireTcp(a) => write!(f, "wire:tcp:{a}"),
        }
    }
}

/// Instantiates the backend named by `spec`.
pub fn connect(spec: &BackendSpec) -> Result<Box<dyn Backend>> {
    Ok(match spec {
        BackendSpec::Synthetic { seed } => Box::new(SyntheticBackend::new(SyntheticConfig {
            seed: *seed,
            ..SyntheticConfig::default()
        })),
        BackendSpec::WireCommand(cmd) => Box::new(wire::WireBackend::spawn(cmd)?),
        BackendSpec::WireTcp(addr) => Box::new(wire::WireBackend::connect(addr)?),
    })
}
