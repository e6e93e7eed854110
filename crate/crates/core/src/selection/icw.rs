//! Inverse cardinality weighting: answers that repeat are down-weighted by the
//! size of the similarity cluster they fall in.

use std::collections::HashMap;

use super::dbscan::{dbscan, ClusterAssignment, DbscanParams};
use super::SelectionError;
use crate::inference::{Candidate, Embedder};
use crate::scalar::Scalar;

/// Embeds the candidates (where not already embedded), clusters them and sets
/// `icw_weight = 1 / group size`, with noise points counting as groups of one.
/// Expects the non-negative candidates of one (document, category).
pub fn icw_weights<T: Scalar>(
    candidates: &mut [Candidate<T>],
    embedder: &dyn Embedder<T>,
    params: &DbscanParams<T>,
) -> Result<ClusterAssignment, SelectionError> {
    let mut cache = HashMap::new();
    for c in candidates.iter_mut() {
        if c.embedding.is_none() {
            let e = match cache.get(&c.answer_text) {
                Some(e) => Clone::clone(e),
                None => {
                    let e = embedder.embed(&c.answer_text)?;
                    cache.insert(c.answer_text.clone(), e.clone());
                    e
                }
            };
            c.embedding = Some(e);
        }
    }
    let points: Vec<_> = candidates
        .iter()
        .map(|c| c.embedding.clone().expect("embedded above"))
        .collect();
    let assignment = dbscan(&points, params)?;
    for (i, c) in candidates.iter_mut().enumerate() {
        c.icw_weight = Some(T::one() / T::from_count(assignment.effective_group_size(i)));
    }
    Ok(assignment)
}
