use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::dbl::{dbl_weight, LocationDistribution};
use super::SelectionError;
use crate::chunker::ChunkKind;
use crate::inference::Candidate;
use crate::scalar::Scalar;

/// How the two heuristic weights turn into a final score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Combiner {
    #[default]
    Product,
    IcwOnly,
    DblOnly,
}

impl fmt::Display for Combiner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Combiner::Product => "product",
            Combiner::IcwOnly => "icw-only",
            Combiner::DblOnly => "dbl-only",
        })
    }
}

impl FromStr for Combiner {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "product" => Ok(Combiner::Product),
            "icw-only" => Ok(Combiner::IcwOnly),
            "dbl-only" => Ok(Combiner::DblOnly),
            other => Err(format!(
                "unknown combiner `{other}` (product, icw-only, dbl-only)"
            )),
        }
    }
}

impl Combiner {
    fn combine<T: Scalar>(self, icw: T, dbl: T) -> T {
        match self {
            Combiner::Product => icw * dbl,
            Combiner::IcwOnly => icw,
            Combiner::DblOnly => dbl,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SelectionResult<T = f64> {
    pub document_id: String,
    pub category_id: usize,
    pub chosen: Option<Candidate<T>>,
    pub all_candidates: Vec<Candidate<T>>,
}

/// Higher score first; ties go to the earliest chunk, base before augmented.
fn rank<T: Scalar>(a: &Candidate<T>, b: &Candidate<T>) -> Ordering {
    let score = |c: &Candidate<T>| c.final_score.unwrap_or_else(T::zero);
    score(b)
        .partial_cmp(&score(a))
        .unwrap_or(Ordering::Equal)
        .then(a.chunk_word_range.0.cmp(&b.chunk_word_range.0))
        .then((a.chunk_kind == ChunkKind::Augmented).cmp(&(b.chunk_kind == ChunkKind::Augmented)))
        .then(a.chunk_index.cmp(&b.chunk_index))
}

/// Scores the positive candidates of one (document, category) and picks one.
///
/// `icw_weight` is read from the candidates (missing counts as 1). With no
/// distribution the localisation weight is 1.
pub fn select<T: Scalar>(
    document_id: &str,
    category_id: usize,
    mut candidates: Vec<Candidate<T>>,
    distribution: Option<&LocationDistribution<T>>,
    document_word_count: usize,
    combiner: Combiner,
) -> Result<SelectionResult<T>, SelectionError> {
    for c in candidates.iter_mut().filter(|c| !c.is_negative) {
        let dbl = match distribution {
            Some(d) => dbl_weight(d, c.chunk_word_range, document_word_count)?,
            None => T::one(),
        };
        let icw = c.icw_weight.unwrap_or_else(T::one);
        c.dbl_weight = Some(dbl);
        c.final_score = Some(combiner.combine(icw, dbl));
    }
    let chosen = candidates
        .iter()
        .filter(|c| !c.is_negative)
        .min_by(|a, b| rank(a, b))
        .cloned();
    Ok(SelectionResult {
        document_id: document_id.to_string(),
        category_id,
        chosen,
        all_candidates: candidates,
    })
}
