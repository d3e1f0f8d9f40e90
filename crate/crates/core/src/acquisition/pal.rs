//! Perturbation-based acquisition.
//!
//! For each unlabeled candidate:
//!
//! 1. find the `k` labeled contexts nearest to the candidate's context
//!    (skipping labeled instances that share the exact same context),
//! 2. split those contexts into sentences and take the sentence whose
//!    embedding is closest to the candidate's context as the distractor,
//! 3. append the distractor to the context and re-run the model,
//! 4. restrict the perturbed start/end distributions to the original tokens,
//!    and score the candidate by the negated sum of the two symmetrised KL
//!    divergences.
//!
//! The `b` lowest (most perturbation-sensitive) candidates are selected.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    euclidean, knn, restrict_renormalize, sort_ascending, split_sentences, sym_kl,
    AcquisitionConfig, AcquisitionRequest, LabeledContext, ScoredCandidate, SelectionDetail,
};
use crate::backend::{Backend, Embedding, ModelHandle};
use crate::dataset::QAInstance;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbedInstance {
    pub original_id: String,
    pub perturbed_context: String,
    pub distractor: String,
    pub distractor_source_id: String,
}

/// Result of scoring one candidate.
#[derive(Debug, Clone, PartialEq)]
pub enum PalOutcome {
    Scored(ScoredCandidate),
    /// No distractor could be built; the candidate ranks as `+inf` and is
    /// never selected.
    Skipped {
        id: String,
        reason: String,
    },
}

impl PalOutcome {
    /// The robustness score, `+inf` for skipped candidates.
    pub fn score(&self) -> f64 {
        match self {
            PalOutcome::Scored(c) => c.score,
            PalOutcome::Skipped { .. } => f64::INFINITY,
        }
    }
}

struct SentenceEntry {
    text: String,
    embedding: Embedding,
}

/// Embeddings of the labeled contexts and of every sentence in them, computed
/// once per acquisition round and shared by all candidates.
pub struct PerturbationIndex {
    contexts: Vec<LabeledContext>,
    sentences: Vec<Vec<SentenceEntry>>,
    positions: HashMap<String, usize>,
}

impl PerturbationIndex {
    pub fn build(
        backend: &dyn Backend,
        model: &ModelHandle,
        labeled: &[&QAInstance],
    ) -> Result<Self> {
        let built = labeled
            .par_iter()
            .map(|inst| {
                let wrap = |e| Error::for_candidate(&inst.id, e);
                let embedding = backend.embed(model, &inst.context).map_err(wrap)?;
                let sentences = split_sentences(&inst.context)
                    .into_iter()
                    .map(|text| {
                        let embedding = backend.embed(model, &text).map_err(wrap)?;
                        Ok(SentenceEntry { text, embedding })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((
                    LabeledContext {
                        id: inst.id.clone(),
                        context: inst.context.clone(),
                        embedding,
                    },
                    sentences,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let (contexts, sentences): (Vec<LabeledContext>, _) = built.into_iter().unzip();
        let positions = contexts
            .iter()
            .enumerate()
            .map(|(i, c)| (c.id.clone(), i))
            .collect();
        Ok(Self {
            contexts,
            sentences,
            positions,
        })
    }

    /// Builds the perturbed instance for `u`, or `None` when no labeled
    /// neighbour with a different context (or no sentence) is available.
    pub fn perturb(
        &self,
        backend: &dyn Backend,
        model: &ModelHandle,
        u: &QAInstance,
        k: usize,
    ) -> Result<Option<PerturbedInstance>> {
        let query = backend.embed(model, &u.context)?;
        let neighbors = match knn(&u.id, &query, &self.contexts, k, &u.context) {
            Ok(n) => n,
            Err(Error::NoEligibleNeighbors) => return Ok(None),
            Err(e) => return Err(e),
        };

        // Neighbours are already in rank order and sentences in text order,
        // so a strict comparison keeps the (rank, sentence index) tie-break.
        let mut best: Option<(f64, &str, &str)> = None;
        for neighbor in &neighbors.neighbors {
            let idx = self.positions[&neighbor.id];
            for sentence in &self.sentences[idx] {
                let d = euclidean(query.as_slice(), sentence.embedding.as_slice())?;
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, &sentence.text, &neighbor.id));
                }
            }
        }

        Ok(best.map(|(_, sentence, source)| PerturbedInstance {
            original_id: u.id.clone(),
            perturbed_context: format!("{} {}", u.context, sentence),
            distractor: sentence.to_string(),
            distractor_source_id: source.to_string(),
        }))
    }
}

/// Builds the perturbation for a single candidate against `labeled`.
pub fn build_perturbation(
    backend: &dyn Backend,
    model: &ModelHandle,
    u: &QAInstance,
    labeled: &[&QAInstance],
    k: usize,
) -> Result<Option<PerturbedInstance>> {
    PerturbationIndex::build(backend, model, labeled)?.perturb(backend, model, u, k)
}

/// Robustness score of `u`: `-(symKL(start) + symKL(end))`, always `<= 0`.
pub fn pal_score(
    backend: &dyn Backend,
    model: &ModelHandle,
    u: &QAInstance,
    index: &PerturbationIndex,
    k: usize,
) -> Result<PalOutcome> {
    let Some(perturbed) = index.perturb(backend, model, u, k)? else {
        return Ok(PalOutcome::Skipped {
            id: u.id.clone(),
            reason: "no labeled neighbour with a different context".into(),
        });
    };

    let original = backend.predict(model, &u.question, &u.context)?;
    let shifted = backend.predict(model, &u.question, &perturbed.perturbed_context)?;
    let n = original.len();
    if shifted.len() < n || shifted.token_offsets()[..n] != *original.token_offsets() {
        return Err(Error::Protocol(format!(
            "{}: appending a distractor changed the original tokenization",
            u.id
        )));
    }

    let kl_start = sym_kl(
        original.start_probs(),
        &restrict_renormalize(shifted.start_probs(), n)?,
    )?;
    let kl_end = sym_kl(
        original.end_probs(),
        &restrict_renormalize(shifted.end_probs(), n)?,
    )?;

    Ok(PalOutcome::Scored(ScoredCandidate {
        id: u.id.clone(),
        score: -(kl_start + kl_end),
        detail: SelectionDetail::Pal {
            distractor: perturbed.distractor,
            source_id: perturbed.distractor_source_id,
            kl_start,
            kl_end,
        },
    }))
}

/// Scores every unlabeled candidate against the current labeled set.
pub fn score_pool(
    backend: &dyn Backend,
    req: &AcquisitionRequest,
    cfg: &AcquisitionConfig,
) -> Result<Vec<PalOutcome>> {
    req.validate()?;
    let labeled = req.labeled()?;
    if labeled.is_empty() {
        return Err(Error::argument("PAL needs a labeled set"));
    }
    let index = PerturbationIndex::build(backend, req.model, &labeled)?;
    req.unlabeled()?
        .par_iter()
        .map(|u| {
            pal_score(backend, req.model, u, &index, cfg.knn_k)
                .map_err(|e| Error::for_candidate(&u.id, e))
        })
        .collect()
}

/// Selects the `b` candidates with the lowest robustness score.
///
/// Fails with [`Error::PalStarved`] when fewer than `b` candidates could be
/// perturbed.
pub fn select_pal(
    backend: &dyn Backend,
    req: &AcquisitionRequest,
    cfg: &AcquisitionConfig,
) -> Result<Vec<ScoredCandidate>> {
    let mut scored: Vec<ScoredCandidate> = score_pool(backend, req, cfg)?
        .into_iter()
        .filter_map(|o| match o {
            PalOutcome::Scored(c) => Some(c),
            PalOutcome::Skipped { .. } => None,
        })
        .collect();
    if scored.len() < req.batch_size {
        return Err(Error::PalStarved {
            scored: scored.len(),
            needed: req.batch_size,
        });
    }
    sort_ascending(&mut scored);
    scored.truncate(req.batch_size);
    Ok(scored)
}
