//! Acquisition strategies and their numerical building blocks.
//!
//! Every strategy is a pure function of the pool snapshot, the model handle,
//! the seed and the configuration. Candidate scoring fans out over rayon;
//! results are sorted afterwards so the thread schedule never affects output.

mod clustering;
mod confidence;
pub mod distance;
pub mod divergence;
pub mod kmeans;
pub mod pal;
pub mod sampling;
pub mod sentences;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, ModelHandle, DEFAULT_MAX_SPAN_TOKENS};
use crate::dataset::{Dataset, QAInstance};
use crate::{Error, Result};

pub use clustering::{select_clustering, select_diversity};
pub use confidence::select_least_confidence;
pub use distance::{euclidean, knn, LabeledContext, Neighbor, NeighborSet};
pub use divergence::{restrict_renormalize, sym_kl, PROB_FLOOR};
pub use kmeans::{kmeans, KMeansResult};
pub use pal::{
    build_perturbation, pal_score, score_pool, select_pal, PalOutcome, PerturbationIndex,
    PerturbedInstance,
};
pub use sampling::{apportion, proportional_sample};
pub use sentences::split_sentences;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Confidence,
    Clustering,
    Diversity,
    Pal,
    /// Uniform random selection; a baseline control, not one of the compared
    /// acquisition functions.
    Random,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Confidence,
        Strategy::Clustering,
        Strategy::Diversity,
        Strategy::Pal,
        Strategy::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Confidence => "confidence",
            Strategy::Clustering => "clustering",
            Strategy::Diversity => "diversity",
            Strategy::Pal => "pal",
            Strategy::Random => "random",
        }
    }

    pub fn is_baseline(self) -> bool {
        self == Strategy::Random
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown strategy {s:?}; expected one of confidence, clustering, diversity, pal, random"
                ))
            })
    }
}

/// Tunables shared by the strategies.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionConfig {
    /// Neighbourhood size for distractor search.
    pub knn_k: usize,
    /// Cluster count for clustering and diversity sampling.
    pub kmeans_k: usize,
    pub kmeans_max_iters: usize,
    pub max_span_tokens: usize,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            knn_k: 5,
            kmeans_k: 10,
            kmeans_max_iters: 100,
            max_span_tokens: DEFAULT_MAX_SPAN_TOKENS,
        }
    }
}

/// One acquisition call over a pool snapshot.
#[derive(Debug, Clone, Copy)]
pub struct AcquisitionRequest<'a> {
    pub dataset: &'a Dataset,
    pub labeled_ids: &'a [String],
    pub unlabeled_ids: &'a [String],
    pub batch_size: usize,
    pub model: &'a ModelHandle,
    pub rng_seed: u64,
}

impl<'a> AcquisitionRequest<'a> {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::argument("batch size must be >= 1"));
        }
        if self.batch_size > self.unlabeled_ids.len() {
            return Err(Error::argument(format!(
                "batch size {} exceeds pool of {}",
                self.batch_size,
                self.unlabeled_ids.len()
            )));
        }
        let labeled: HashSet<&str> = self.labeled_ids.iter().map(String::as_str).collect();
        for id in self.unlabeled_ids {
            if labeled.contains(id.as_str()) {
                return Err(Error::argument(format!(
                    "{id} is both labeled and unlabeled"
                )));
            }
            self.dataset.require(id)?;
        }
        for id in self.labeled_ids {
            self.dataset.require(id)?;
        }
        Ok(())
    }

    pub fn labeled(&self) -> Result<Vec<&'a QAInstance>> {
        self.labeled_ids
            .iter()
            .map(|id| self.dataset.require(id))
            .collect()
    }

    pub fn unlabeled(&self) -> Result<Vec<&'a QAInstance>> {
        self.unlabeled_ids
            .iter()
            .map(|id| self.dataset.require(id))
            .collect()
    }
}

/// Strategy-specific evidence attached to a selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SelectionDetail {
    /// Score is the decoded span score.
    Confidence,
    Cluster {
        cluster: usize,
        cluster_size: usize,
    },
    /// Score is the distance to the nearest labeled centroid.
    Diversity,
    Pal {
        distractor: String,
        source_id: String,
        kl_start: f64,
        kl_end: f64,
    },
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub id: String,
    pub score: f64,
    pub detail: SelectionDetail,
}

/// Sorts ascending by score, then id.
pub(crate) fn sort_ascending(cands: &mut [ScoredCandidate]) {
    cands.sort_by(|a, b| a.score.total_cmp(&b.score).then_with(|| a.id.cmp(&b.id)));
}

/// Text embedded to represent a question for clustering and diversity.
pub(crate) fn question_with_context(inst: &QAInstance) -> String {
    format!("{} {}", inst.question, inst.context)
}

/// Uniform random batch; the baseline control.
pub fn select_random(req: &AcquisitionRequest) -> Result<Vec<ScoredCandidate>> {
    req.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(req.rng_seed);
    let mut picked: Vec<ScoredCandidate> =
        sample(&mut rng, req.unlabeled_ids.len(), req.batch_size)
            .into_iter()
            .map(|i| ScoredCandidate {
                id: req.unlabeled_ids[i].clone(),
                score: 0.0,
                detail: SelectionDetail::Random,
            })
            .collect();
    picked.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(picked)
}

/// Dispatches to the strategy's selection function.
pub fn select(
    strategy: Strategy,
    backend: &dyn Backend,
    req: &AcquisitionRequest,
    cfg: &AcquisitionConfig,
) -> Result<Vec<ScoredCandidate>> {
    match strategy {
        Strategy::Confidence => select_least_confidence(backend, req, cfg),
        Strategy::Clustering => select_clustering(backend, req, cfg),
        Strategy::Diversity => select_diversity(backend, req, cfg),
        Strategy::Pal => select_pal(backend, req, cfg),
        Strategy::Random => select_random(req),
    }
}
