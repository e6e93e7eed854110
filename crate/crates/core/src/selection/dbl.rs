//! Distribution-based localisation.
//!
//! Each labelled document is cut into [`SEGMENTS`] word segments (word `w` of
//! an `n`-word document falls in segment `floor(w * 100 / n)`). For every
//! answer, segment `i` scores `|a_i| / |d_i|`, the fraction of its words that
//! belong to the answer. Scores are summed over all (document, answer) pairs
//! of a category and divided by their maximum.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::SelectionError;
use crate::corpus::{Document, GoldAnswer};
use crate::scalar::{ratio, Scalar};

pub const SEGMENTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LocationDistribution<T = f64> {
    pub category_id: usize,
    pub weights: Vec<T>,
    pub n_documents: usize,
}

pub fn segment_of(word: usize, n_words: usize) -> usize {
    word * SEGMENTS / n_words
}

/// Number of words in each segment of an `n_words` document.
pub fn segment_sizes(n_words: usize) -> [usize; SEGMENTS] {
    let mut sizes = [0; SEGMENTS];
    for w in 0..n_words {
        sizes[segment_of(w, n_words)] += 1;
    }
    sizes
}

/// Unnormalized per-segment scores for one answer occupying words `[start, end)`.
pub fn location_list<T: Scalar>(n_words: usize, answer: (usize, usize)) -> Vec<T> {
    let sizes = segment_sizes(n_words);
    let mut hits = [0usize; SEGMENTS];
    for w in answer.0..answer.1.min(n_words) {
        hits[segment_of(w, n_words)] += 1;
    }
    hits.iter()
        .zip(&sizes)
        .map(|(&a, &d)| ratio(a, d))
        .collect()
}

/// Builds the normalized distribution for one category from labelled documents.
/// Negative gold answers and other categories are skipped.
pub fn build_distribution<T: Scalar>(
    labelled: &[(&Document, &GoldAnswer)],
    category_id: usize,
) -> Result<LocationDistribution<T>, SelectionError> {
    let mut sum = vec![T::zero(); SEGMENTS];
    let mut contributors = BTreeSet::new();
    for (doc, gold) in labelled {
        if gold.category_id != category_id || gold.is_negative || doc.word_count == 0 {
            continue;
        }
        let words = doc.words();
        for span in &gold.spans {
            let Some(range) = span.word_range(&words) else {
                continue;
            };
            for (acc, l) in sum
                .iter_mut()
                .zip(location_list::<T>(doc.word_count, range))
            {
                *acc += l;
            }
            contributors.insert(doc.id.as_str());
        }
    }
    let max = sum.iter().copied().fold(T::zero(), T::max);
    if contributors.is_empty() || !(max > T::zero()) {
        return Err(SelectionError::NoContributingDocuments(category_id));
    }
    Ok(LocationDistribution {
        category_id,
        weights: sum.into_iter().map(|v| v / max).collect(),
        n_documents: contributors.len(),
    })
}

/// Mean distribution weight over the segments a chunk's word range spans.
pub fn dbl_weight<T: Scalar>(
    distribution: &LocationDistribution<T>,
    range: (usize, usize),
    document_word_count: usize,
) -> Result<T, SelectionError> {
    let (start, end) = range;
    if start >= end || end > document_word_count {
        return Err(SelectionError::RangeOutsideDocument {
            start,
            end,
            words: document_word_count,
        });
    }
    let first = segment_of(start, document_word_count);
    let last = segment_of(end - 1, document_word_count);
    let spanned = &distribution.weights[first..=last];
    let total = spanned.iter().copied().fold(T::zero(), |a, b| a + b);
    Ok(total / T::from_count(spanned.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::AnswerSpan;

    /// Document of `n` words `w0 .. w{n-1}` with one answer over words `[s, e)`.
    fn labelled(id: &str, n: usize, s: usize, e: usize) -> (Document, GoldAnswer) {
        let words: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
        let text = words.join(" ");
        let start = words[..s].iter().map(|w| w.len() + 1).sum();
        let doc = Document::new(id, id, text);
        let gold = GoldAnswer {
            document_id: id.into(),
            category_id: 7,
            spans: vec![AnswerSpan {
                text: words[s..e].join(" "),
                start,
            }],
            is_negative: false,
        };
        (doc, gold)
    }

    fn build(items: &[(Document, GoldAnswer)]) -> LocationDistribution<f64> {
        let refs: Vec<_> = items.iter().map(|(d, g)| (d, g)).collect();
        build_distribution(&refs, 7).unwrap()
    }

    #[test]
    fn answer_tiling_ten_segments() {
        let d = build(&[labelled("a", 1000, 100, 200)]);
        let expected: Vec<f64> = (0..100)
            .map(|i| if (10..20).contains(&i) { 1.0 } else { 0.0 })
            .collect();
        assert_eq!(d.weights, expected);
        assert_eq!(d.n_documents, 1);
    }

    #[test]
    fn partial_segments_normalize_to_one() {
        let raw: Vec<f64> = location_list(1000, (105, 115));
        assert_eq!(raw[10], 0.5);
        assert_eq!(raw[11], 0.5);
        assert_eq!(raw.iter().filter(|v| **v > 0.0).count(), 2);
        let d = build(&[labelled("a", 1000, 105, 115)]);
        assert_eq!(d.weights[10], 1.0);
        assert_eq!(d.weights[11], 1.0);
        assert_eq!(d.weights.iter().sum::<f64>(), 2.0);
    }

    #[test]
    fn disjoint_regions_sum() {
        let d = build(&[labelled("a", 1000, 0, 100), labelled("b", 1000, 900, 1000)]);
        for (i, w) in d.weights.iter().enumerate() {
            let expect = if !(10..90).contains(&i) { 1.0 } else { 0.0 };
            assert_eq!(*w, expect, "segment {i}");
        }
        assert_eq!(d.n_documents, 2);
    }

    #[test]
    fn short_documents_leave_empty_segments() {
        let sizes = segment_sizes(40);
        assert_eq!(sizes.iter().sum::<usize>(), 40);
        assert_eq!(sizes.iter().filter(|s| **s == 0).count(), 60);
        let raw: Vec<f64> = location_list(40, (0, 40));
        assert!(raw.iter().all(|v| *v == 0.0 || *v == 1.0));
    }

    #[test]
    fn no_contributors_is_error() {
        let (doc, mut gold) = labelled("a", 100, 0, 5);
        gold.is_negative = true;
        gold.spans.clear();
        assert!(matches!(
            build_distribution::<f64>(&[(&doc, &gold)], 7),
            Err(SelectionError::NoContributingDocuments(7))
        ));
        let (doc, gold) = labelled("a", 100, 0, 5);
        assert!(build_distribution::<f64>(&[(&doc, &gold)], 8).is_err());
    }

    #[test]
    fn chunk_weights() {
        let d = build(&[labelled("a", 1000, 100, 200)]);
        assert_eq!(dbl_weight(&d, (100, 200), 1000).unwrap(), 1.0);
        assert_eq!(dbl_weight(&d, (0, 100), 1000).unwrap(), 0.0);
        assert_eq!(dbl_weight(&d, (0, 1000), 1000).unwrap(), 0.1);
        assert!(dbl_weight(&d, (900, 1001), 1000).is_err());
        assert!(dbl_weight(&d, (5, 5), 1000).is_err());
    }

    #[test]
    fn f32_distribution() {
        let items = [labelled("a", 1000, 100, 200)];
        let refs: Vec<_> = items.iter().map(|(d, g)| (d, g)).collect();
        let d: LocationDistribution<f32> = build_distribution(&refs, 7).unwrap();
        assert_eq!(d.weights[15], 1.0f32);
    }
}
