use rayon::prelude::*;

use super::{
    sort_ascending, AcquisitionConfig, AcquisitionRequest, ScoredCandidate, SelectionDetail,
};
use crate::backend::{decode_answer, Backend};
use crate::{Error, Result};

/// Least confidence: the `b` candidates whose best decoded span has the
/// lowest score (start probability plus end probability).
pub fn select_least_confidence(
    backend: &dyn Backend,
    req: &AcquisitionRequest,
    cfg: &AcquisitionConfig,
) -> Result<Vec<ScoredCandidate>> {
    req.validate()?;
    let mut scored = req
        .unlabeled()?
        .par_iter()
        .map(|inst| {
            let span = backend
                .predict(req.model, &inst.question, &inst.context)
                .and_then(|d| decode_answer(&d, &inst.context, cfg.max_span_tokens))
                .map_err(|e| Error::for_candidate(&inst.id, e))?;
            Ok(ScoredCandidate {
                id: inst.id.clone(),
                score: span.score,
                detail: SelectionDetail::Confidence,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    sort_ascending(&mut scored);
    scored.truncate(req.batch_size);
    Ok(scored)
}
