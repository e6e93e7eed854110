//! Token-overlap metrics. Both operate on lowercased tokens split on runs of
//! non-alphanumeric characters, so scores depend on that tokenization.

use std::collections::HashMap;

use crate::scalar::{ratio, Scalar};

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn f1<T: Scalar>(overlap: usize, n_pred: usize, n_ref: usize) -> T {
    if overlap == 0 {
        return T::zero();
    }
    let p: T = ratio(overlap, n_pred);
    let r: T = ratio(overlap, n_ref);
    let two = T::one() + T::one();
    two * p * r / (p + r)
}

pub fn rouge_l_f1<T: Scalar>(prediction: &str, reference: &str) -> T {
    let (p, r) = (tokenize(prediction), tokenize(reference));
    f1(lcs_len(&p, &r), p.len(), r.len())
}

/// Unigram F1 on clipped token counts.
pub fn rouge_1_f1<T: Scalar>(prediction: &str, reference: &str) -> T {
    let (p, r) = (tokenize(prediction), tokenize(reference));
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &r {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0;
    for t in &p {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    f1(overlap, p.len(), r.len())
}

/// Exact-match alignment as (prediction index, reference index) pairs in
/// prediction order. Each prediction token extends the current run when the
/// next reference token matches, otherwise takes the earliest free match.
fn align(pred: &[String], reference: &[String]) -> Vec<(usize, usize)> {
    let mut used = vec![false; reference.len()];
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (i, t) in pred.iter().enumerate() {
        let next = pairs
            .last()
            .filter(|&&(pi, _)| pi + 1 == i)
            .map(|&(_, rj)| rj + 1)
            .filter(|&j| j < reference.len() && !used[j] && &reference[j] == t);
        let j = next.or_else(|| (0..reference.len()).find(|&j| !used[j] && &reference[j] == t));
        if let Some(j) = j {
            used[j] = true;
            pairs.push((i, j));
        }
    }
    pairs
}

pub fn meteor<T: Scalar>(prediction: &str, reference: &str) -> T {
    let (p, r) = (tokenize(prediction), tokenize(reference));
    let pairs = align(&p, &r);
    let m = pairs.len();
    if m == 0 {
        return T::zero();
    }
    let chunks = 1 + pairs
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count();
    let precision: T = ratio(m, p.len());
    let recall: T = ratio(m, r.len());
    let nine = T::from_count(9);
    let fmean = T::from_count(10) * precision * recall / (recall + nine * precision);
    let frag: T = ratio(chunks, m);
    let penalty = T::from_f64_lossy(0.5) * frag * frag * frag;
    fmean * (T::one() - penalty)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenization() {
        assert_eq!(
            tokenize("Jan. 1, 2020 -- ACME's"),
            ["jan", "1", "2020", "acme", "s"]
        );
        assert!(tokenize(" ,. ").is_empty());
    }

    #[test]
    fn rouge_l_fixture() {
        let s: f64 = rouge_l_f1("the effective date is january 1", "january 1");
        assert!((s - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rouge_l_uses_order() {
        // lcs("a b c d", "d c b a") = 1 -> p = r = 1/4
        let s: f64 = rouge_l_f1("a b c d", "d c b a");
        assert!((s - 0.25).abs() < 1e-12);
        let s1: f64 = rouge_1_f1("a b c d", "d c b a");
        assert_eq!(s1, 1.0);
    }

    #[test]
    fn rouge_empty_and_disjoint() {
        assert_eq!(rouge_l_f1::<f64>("", "a"), 0.0);
        assert_eq!(rouge_l_f1::<f64>("a", ""), 0.0);
        assert_eq!(rouge_l_f1::<f64>("x y", "a b"), 0.0);
        assert_eq!(rouge_1_f1::<f64>("x y", "a b"), 0.0);
    }

    #[test]
    fn rouge_1_clips_counts() {
        // pred "a a a", ref "a b": overlap 1, p = 1/3, r = 1/2, f1 = 0.4
        let s: f64 = rouge_1_f1("a a a", "a b");
        assert!((s - 0.4).abs() < 1e-12);
    }

    #[test]
    fn meteor_fragmented() {
        let s: f64 = meteor("b a", "a b");
        assert!((s - 0.5).abs() < 1e-12);
    }

    #[test]
    fn meteor_identity_penalty() {
        let s: f64 = meteor("a b", "a b");
        assert!((s - 0.9375).abs() < 1e-12);
        let s: f64 = meteor("x", "x");
        assert!((s - 0.5).abs() < 1e-12);
    }

    #[test]
    fn meteor_recall_weighted() {
        // pred "a b c d", ref "a b": m=2, p=1/2, r=1, fmean = 10*0.5/(1+4.5) = 10/11
        // one chunk -> penalty 0.5/8
        let s: f64 = meteor("a b c d", "a b");
        let expect = 10.0 / 11.0 * (1.0 - 0.5 / 8.0);
        assert!((s - expect).abs() < 1e-12);
    }

    #[test]
    fn meteor_prefers_contiguous_match() {
        // the second "a" should extend the run started by "x", not reuse ref[0]
        let pairs = align(&tokenize("x a"), &tokenize("a x a"));
        assert_eq!(pairs, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn generic_over_f32() {
        let s: f32 = rouge_l_f1("the effective date is january 1", "january 1");
        assert!((s - 0.5).abs() < 1e-6);
    }
}
