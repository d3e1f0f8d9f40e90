//! Deterministic stand-in for a fine-tuned reader model.
//!
//! * `embed` hashes lowercased alphanumeric tokens into `dim` buckets (seeded
//!   FNV-1a) and L2-normalizes the counts.
//! * `predict` gives every context token that also occurs in the question an
//!   affinity logit of `affinity / m`, where `m` is the number of such matching
//!   tokens in the context. Appending a distractor that repeats question words
//!   raises `m` and flattens the logits on the original tokens, so un-memorized
//!   instances react to perturbation.
//! * `fine_tune` memorizes `(question, context, gold span)`. When the queried
//!   context equals or extends a memorized one, the gold start/end tokens get
//!   `memory_boost` added and `m` is counted over the memorized passage only,
//!   which makes memorized instances confident and insensitive to appended
//!   text.

use std::collections::{HashMap, HashSet};

use log::warn;

use super::{Backend, Embedding, ModelHandle, SpanDistribution};
use crate::dataset::QAInstance;
use crate::text::{char_span_to_tokens, tokenize, Token};
use crate::{Error, Result};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub dim: usize,
    pub affinity: f64,
    pub memory_boost: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dim: 64,
            affinity: 3.0,
            memory_boost: 4.0,
        }
    }
}

#[derive(Debug, Clone)]
struct Memory {
    context: String,
    n_tokens: usize,
    start: usize,
    end: usize,
}

#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    config: SyntheticConfig,
    t: u64,
    memory: HashMap<String, Vec<Memory>>,
}

impl SyntheticBackend {
    pub fn new(config: SyntheticConfig) -> Self {
        Self {
            config,
            t: 0,
            memory: HashMap::new(),
        }
    }

    pub fn with_seed(seed: u64) -> Self {
        Self::new(SyntheticConfig {
            seed,
            ..SyntheticConfig::default()
        })
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.config
    }

    fn name(&self) -> String {
        format!("synthetic:{}", self.config.seed)
    }

    fn check(&self, model: &ModelHandle) -> Result<()> {
        if model.t != self.t {
            return Err(Error::StaleHandle {
                handle: model.t,
                backend: self.t,
            });
        }
        if model.backend != self.name() {
            return Err(Error::argument(format!(
                "handle for {} used with {}",
                model.backend,
                self.name()
            )));
        }
        Ok(())
    }

    fn bucket(&self, token: &str) -> usize {
        let mut h = FNV_OFFSET;
        for b in self
            .config
            .seed
            .to_le_bytes()
            .iter()
            .chain(token.as_bytes())
        {
            h ^= u64::from(*b);
            h = h.wrapping_mul(FNV_PRIME);
        }
        (h % self.config.dim as u64) as usize
    }

    /// The longest memorized passage for `question` that `context` equals or
    /// extends at a whitespace boundary.
    fn recall(&self, question: &str, context: &str) -> Option<&Memory> {
        self.memory
            .get(question)?
            .iter()
            .filter(|m| {
                context == m.context
                    || context
                        .strip_prefix(m.context.as_str())
                        .is_some_and(|rest| rest.starts_with(char::is_whitespace))
            })
            .max_by_key(|m| m.context.len())
    }
}

fn is_word(token: &Token) -> bool {
    token.text.chars().all(char::is_alphanumeric)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl Backend for SyntheticBackend {
    fn handle(&self) -> Result<ModelHandle> {
        Ok(ModelHandle {
            backend: self.name(),
            t: self.t,
            dim: self.config.dim,
        })
    }

    fn embed(&self, model: &ModelHandle, text: &str) -> Result<Embedding> {
        self.check(model)?;
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(Error::argument("cannot embed empty text"));
        }
        let words: Vec<&Token> = tokens.iter().filter(|t| is_word(t)).collect();
        let used: Vec<&Token> = if words.is_empty() {
            tokens.iter().collect()
        } else {
            words
        };

        let mut counts = vec![0.0; self.config.dim];
        for tok in used {
            counts[self.bucket(&tok.text.to_lowercase())] += 1.0;
        }
        let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        Embedding::new(counts.into_iter().map(|c| c / norm).collect())
    }

    fn predict(
        &self,
        model: &ModelHandle,
        question: &str,
        context: &str,
    ) -> Result<SpanDistribution> {
        self.check(model)?;
        if question.trim().is_empty() {
            return Err(Error::argument("empty question"));
        }
        let tokens = tokenize(context);
        if tokens.is_empty() {
            return Err(Error::argument("context has no tokens"));
        }

        let question_words: HashSet<String> = tokenize(question)
            .iter()
            .filter(|t| is_word(t))
            .map(|t| t.text.to_lowercase())
            .collect();
        let matches: Vec<bool> = tokens
            .iter()
            .map(|t| is_word(t) && question_words.contains(&t.text.to_lowercase()))
            .collect();

        let memory = self.recall(question, context);
        let scope = memory.map_or(tokens.len(), |m| m.n_tokens.min(tokens.len()));
        let m = matches[..scope].iter().filter(|&&b| b).count().max(1);
        let affinity = self.config.affinity / m as f64;

        let base: Vec<f64> = matches
            .iter()
            .map(|&hit| if hit { affinity } else { 0.0 })
            .collect();
        let mut start_logits = base.clone();
        let mut end_logits = base;
        if let Some(mem) = memory {
            start_logits[mem.start] += self.config.memory_boost;
            end_logits[mem.end] += self.config.memory_boost;
        }

        SpanDistribution::new(
            softmax(&start_logits),
            softmax(&end_logits),
            tokens.iter().map(|t| (t.char_start, t.char_end)).collect(),
        )
    }

    fn fine_tune(&mut self, model: &ModelHandle, labeled: &[QAInstance]) -> Result<ModelHandle> {
        self.check(model)?;
        if labeled.is_empty() {
            return Err(Error::argument("fine_tune needs at least one instance"));
        }
        for inst in labeled {
            let tokens = tokenize(&inst.context);
            let (start, len) = (inst.answer_start, crate::text::char_len(&inst.answer_text));
            let Some((s, e)) = char_span_to_tokens(&tokens, start, len) else {
                warn!("{}: answer does not align with any token; skipped", inst.id);
                continue;
            };
            let entries = self.memory.entry(inst.question.clone()).or_default();
            entries.retain(|m| m.context != inst.context);
            entries.push(Memory {
                context: inst.context.clone(),
                n_tokens: tokens.len(),
                start: s,
                end: e,
            });
        }
        self.t += 1;
        self.handle()
    }
}
