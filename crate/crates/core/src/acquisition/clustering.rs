use std::collections::HashMap;

use rayon::prelude::*;

use super::{
    euclidean, kmeans, proportional_sample, question_with_context, AcquisitionConfig,
    AcquisitionRequest, ScoredCandidate, SelectionDetail,
};
use crate::backend::{Backend, Embedding};
use crate::dataset::QAInstance;
use crate::{Error, Result};

fn embed_all(
    backend: &dyn Backend,
    req: &AcquisitionRequest,
    instances: &[&QAInstance],
) -> Result<Vec<Embedding>> {
    instances
        .par_iter()
        .map(|inst| {
            backend
                .embed(req.model, &question_with_context(inst))
                .map_err(|e| Error::for_candidate(&inst.id, e))
        })
        .collect()
}

/// Clustering sampling: k-means over question+context embeddings of the pool,
/// then a size-proportional draw from each cluster.
pub fn select_clustering(
    backend: &dyn Backend,
    req: &AcquisitionRequest,
    cfg: &AcquisitionConfig,
) -> Result<Vec<ScoredCandidate>> {
    req.validate()?;
    let pool = req.unlabeled()?;
    let embeddings = embed_all(backend, req, &pool)?;
    let k = cfg.kmeans_k.clamp(1, pool.len());
    let clusters = kmeans(&embeddings, k, req.rng_seed, cfg.kmeans_max_iters)?;
    let sizes = clusters.cluster_sizes();

    let picked = proportional_sample(
        req.unlabeled_ids,
        &clusters.assignments,
        req.batch_size,
        req.rng_seed,
    )?;
    let position: HashMap<&str, usize> = req
        .unlabeled_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();

    let mut out = picked
        .into_iter()
        .map(|id| {
            let i = position[id.as_str()];
            let cluster = clusters.assignments[i];
            let score = euclidean(embeddings[i].as_slice(), &clusters.centroids[cluster])?;
            Ok(ScoredCandidate {
                id,
                score,
                detail: SelectionDetail::Cluster {
                    cluster,
                    cluster_size: sizes[cluster],
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| match (&a.detail, &b.detail) {
        (
            SelectionDetail::Cluster { cluster: ca, .. },
            SelectionDetail::Cluster { cluster: cb, .. },
        ) => ca.cmp(cb).then_with(|| a.id.cmp(&b.id)),
        _ => a.id.cmp(&b.id),
    });
    Ok(out)
}

/// Maximal diversity: cluster the labeled set, score each candidate by its
/// distance to the nearest labeled centroid, and take the `b` farthest.
pub fn select_diversity(
    backend: &dyn Backend,
    req: &AcquisitionRequest,
    cfg: &AcquisitionConfig,
) -> Result<Vec<ScoredCandidate>> {
    req.validate()?;
    let labeled = req.labeled()?;
    if labeled.is_empty() {
        return Err(Error::argument("diversity sampling needs a labeled set"));
    }
    let labeled_emb = embed_all(backend, req, &labeled)?;
    let k = cfg.kmeans_k.clamp(1, labeled.len());
    let centroids = kmeans(&labeled_emb, k, req.rng_seed, cfg.kmeans_max_iters)?.centroids;

    let pool = req.unlabeled()?;
    let pool_emb = embed_all(backend, req, &pool)?;
    let mut scored = pool
        .iter()
        .zip(&pool_emb)
        .map(|(inst, emb)| {
            let mut nearest = f64::INFINITY;
            for c in &centroids {
                nearest = nearest.min(euclidean(emb.as_slice(), c)?);
            }
            Ok(ScoredCandidate {
                id: inst.id.clone(),
                score: nearest,
                detail: SelectionDetail::Diversity,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
    scored.truncate(req.batch_size);
    Ok(scored)
}
