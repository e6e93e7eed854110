use std::collections::{BTreeMap, BTreeSet};

use legalqa_core::chunker::Chunk;
use legalqa_core::chunker::{chunk, ChunkKind, ChunkingConfig};
use legalqa_core::corpus::{AnswerSpan, Document, GoldAnswer};
use legalqa_core::inference::{Candidate, CellContext, EmbeddingVector, FallbackEmbedder};
use legalqa_core::metrics::{meteor, rouge_1_f1, rouge_l_f1, MetricScore, Thresholds};
use legalqa_core::prompt::{enumerate_combinations, TechniqueKind};
use legalqa_core::selection::{
    build_distribution, dbl_weight, dbscan, icw_weights, location_list, segment_sizes, select,
    Combiner, DbscanParams,
};
use proptest::prelude::*;

fn words_doc(n: usize) -> Document {
    let text = (0..n)
        .map(|i| format!("w{i}"))
        .collect::<Vec<_>>()
        .join(" ");
    Document::new("d", "d", text)
}

fn check_chunk_laws(chunks: &[Chunk], n: usize, size: usize) -> Result<(), TestCaseError> {
    let base: Vec<&Chunk> = chunks
        .iter()
        .filter(|c| c.kind == ChunkKind::Base)
        .collect();
    let aug: Vec<&Chunk> = chunks
        .iter()
        .filter(|c| c.kind == ChunkKind::Augmented)
        .collect();
    prop_assert_eq!(base.len(), n.div_ceil(size));
    prop_assert_eq!(aug.len(), base.len().saturating_sub(1));
    for w in 0..n {
        prop_assert!(
            base.iter().any(|c| c.contains_word(w)),
            "word {} uncovered",
            w
        );
    }
    for b in base.iter().skip(1).map(|c| c.start_word) {
        prop_assert!(
            aug.iter()
                .any(|c| c.contains_word(b - 1) && c.contains_word(b)),
            "cut {} not healed",
            b
        );
    }
    for c in chunks {
        prop_assert!(c.end_word <= n && c.start_word < c.end_word);
    }
    Ok(())
}

proptest! {
    #[test]
    fn chunking_covers_and_heals(n in 1usize..3000, size in 2usize..1500) {
        let c = chunk(&words_doc(n), &ChunkingConfig { chunk_size: size, augment: true }).unwrap();
        check_chunk_laws(&c, n, size)?;
        let idx: Vec<usize> = c.iter().map(|c| c.index).collect();
        prop_assert_eq!(idx, (0..c.len()).collect::<Vec<_>>());
    }

    #[test]
    fn chunk_text_matches_range(n in 1usize..400, size in 2usize..60) {
        let d = words_doc(n);
        for c in chunk(&d, &ChunkingConfig { chunk_size: size, augment: true }).unwrap() {
            let expect = (c.start_word..c.end_word).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
            prop_assert_eq!(c.text, expect);
        }
    }
}

/// Quadratic reference: core points grouped by connectivity, each border
/// point attached to the adjacent group whose lowest core index is smallest.
fn reference_partition(points: &[Vec<f64>], eps: f64, min_points: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let dist = |a: &[f64], b: &[f64]| {
        let dot = a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y);
        (1.0 - dot).clamp(0.0, 2.0)
    };
    let adj = |i: usize, j: usize| dist(&points[i], &points[j]) <= eps;
    let core: Vec<bool> = (0..n)
        .map(|i| (0..n).filter(|&j| adj(i, j)).count() >= min_points)
        .collect();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut Vec<usize>, x: usize) -> usize {
        if p[x] != x {
            let r = find(p, p[x]);
            p[x] = r;
        }
        p[x]
    }
    for i in 0..n {
        for j in 0..n {
            if core[i] && core[j] && adj(i, j) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    // with min-index union, each root is its component's lowest core index
    (0..n)
        .map(|i| {
            if core[i] {
                Some(find(&mut parent, i))
            } else {
                (0..n)
                    .filter(|&j| core[j] && adj(i, j))
                    .map(|j| find(&mut parent, j))
                    .min()
            }
        })
        .collect()
}

fn same_partition(a: &[i64], b: &[Option<usize>]) -> bool {
    let mut fwd = BTreeMap::new();
    let mut back = BTreeMap::new();
    a.iter().zip(b).all(|(&x, &y)| match (x, y) {
        (-1, None) => true,
        (-1, Some(_)) | (_, None) => false,
        (x, Some(y)) => *fwd.entry(x).or_insert(y) == y && *back.entry(y).or_insert(x) == x,
    })
}

fn clustered_points() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..5, 0usize..=64).prop_flat_map(|(centers, n)| {
        (
            prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), centers),
            prop::collection::vec((0usize..centers, prop::collection::vec(-0.3f64..0.3, 3)), n),
        )
            .prop_map(|(cs, members)| {
                members
                    .into_iter()
                    .map(|(c, noise)| {
                        cs[c]
                            .iter()
                            .zip(&noise)
                            .map(|(a, b)| a + b + 1e-3)
                            .collect()
                    })
                    .collect()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]
    #[test]
    fn dbscan_matches_reference(raw in clustered_points(), eps in 0.001f64..=1.0, min_points in 1usize..=5) {
        let pts: Vec<EmbeddingVector<f64>> = raw.into_iter().map(|v| EmbeddingVector::normalized(v).unwrap()).collect();
        let plain: Vec<Vec<f64>> = pts.iter().map(|p| p.values().to_vec()).collect();
        let got = dbscan(&pts, &DbscanParams { epsilon: eps, min_points }).unwrap();
        let want = reference_partition(&plain, eps, min_points);
        prop_assert!(same_partition(&got.labels, &want), "{:?} vs {:?}", got.labels, want);
        let sized: usize = got.group_sizes.values().sum();
        prop_assert_eq!(sized, got.labels.iter().filter(|&&l| l >= 0).count());
    }
}

fn answer_doc(n: usize, s: usize, e: usize, category_id: usize) -> (Document, GoldAnswer) {
    let words: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
    let start = words[..s].iter().map(|w| w.len() + 1).sum();
    let gold = GoldAnswer {
        document_id: format!("d{n}"),
        category_id,
        spans: vec![AnswerSpan {
            text: words[s..e].join(" "),
            start,
        }],
        is_negative: false,
    };
    (Document::new(format!("d{n}"), "t", words.join(" ")), gold)
}

proptest! {
    #[test]
    fn dbl_mass_is_conserved((n, s, e) in (1usize..4000).prop_flat_map(|n| (Just(n), 0..n)).prop_flat_map(|(n, s)| (Just(n), Just(s), s + 1..=n))) {
        let l: Vec<f64> = location_list(n, (s, e));
        let sizes = segment_sizes(n);
        let mass: f64 = l.iter().zip(sizes.iter()).map(|(li, &d)| li * d as f64).sum();
        prop_assert!((mass - (e - s) as f64).abs() <= 2.0);
        prop_assert!(l.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn dbl_normalized_and_weights_bounded(
        docs in prop::collection::vec((50usize..3000, 0.0f64..0.95, 0.01f64..0.05), 1..6),
        chunk in (0.0f64..1.0, 0.0f64..1.0),
    ) {
        let built: Vec<(Document, GoldAnswer)> = docs
            .iter()
            .enumerate()
            .map(|(k, &(n, pos, len))| {
                let n = n + k; // distinct ids
                let s = (pos * n as f64) as usize;
                let e = (s + ((len * n as f64) as usize).max(1)).min(n);
                answer_doc(n, s, e, 3)
            })
            .collect();
        let pairs: Vec<(&Document, &GoldAnswer)> = built.iter().map(|(d, g)| (d, g)).collect();
        let dist = build_distribution::<f64>(&pairs, 3).unwrap();
        let max = dist.weights.iter().cloned().fold(0.0, f64::max);
        prop_assert!((max - 1.0).abs() < 1e-12);
        prop_assert!(dist.weights.iter().all(|&w| (0.0..=1.0).contains(&w)));
        let n = 1000;
        let (a, b) = ((chunk.0 * n as f64) as usize, (chunk.1 * n as f64) as usize);
        let (a, b) = (a.min(b), a.max(b) + 1);
        let w = dbl_weight(&dist, (a, b.min(n)), n).unwrap();
        prop_assert!((0.0..=1.0).contains(&w));
    }

    // with n a multiple of 100, word w of the original and words 2w, 2w+1 of
    // the doubled document land in the same segment
    #[test]
    fn dbl_is_invariant_to_duplicating_words(k in 1usize..30, pos in 0.0f64..0.95, len in 0.01f64..0.2) {
        let n = 100 * k;
        let s = (pos * n as f64) as usize;
        let e = (s + ((len * n as f64) as usize).max(1)).min(n);
        let once: Vec<f64> = location_list(n, (s, e));
        let twice: Vec<f64> = location_list(2 * n, (2 * s, 2 * e));
        prop_assert_eq!(&once, &twice);
        let (d1, g1) = answer_doc(n, s, e, 0);
        let (d2, g2) = answer_doc(2 * n, 2 * s, 2 * e, 0);
        let a = build_distribution::<f64>(&[(&d1, &g1)], 0).unwrap();
        let b = build_distribution::<f64>(&[(&d2, &g2)], 0).unwrap();
        prop_assert_eq!(a.weights, b.weights);
    }
}

fn candidates(texts: &[String]) -> Vec<Candidate<f64>> {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let cell = CellContext {
                document_id: "d".into(),
                category_id: 0,
                chunk_index: i,
                word_range: (i, i + 1),
            };
            Candidate::new(&cell, ChunkKind::Base, t.clone())
        })
        .collect()
}

proptest! {
    #[test]
    fn icw_weights_are_reciprocal_group_sizes(
        k in prop::sample::select(vec![2usize, 3, 5]),
        shared in "[a-z]{6,14}",
        others in prop::collection::btree_set("[0-9]{3}[A-Z]{5,12}", 0..5),
        order in any::<u64>(),
    ) {
        let mut texts: Vec<String> = vec![shared.clone(); k];
        texts.extend(others.iter().cloned());
        // deterministic shuffle
        let len = texts.len();
        for i in (1..len).rev() {
            texts.swap(i, (order as usize).wrapping_mul(i + 7) % (i + 1));
        }
        let embedder = FallbackEmbedder::default();
        let params = DbscanParams::default();
        let mut c = candidates(&texts);
        // the distinct texts must actually be pairwise distant
        let emb: Vec<_> = texts.iter().map(|t| legalqa_core::inference::Embedder::<f64>::embed(&embedder, t).unwrap()).collect();
        for i in 0..len {
            for j in 0..i {
                if texts[i] != texts[j] {
                    prop_assume!(legalqa_core::inference::cosine_distance(&emb[i], &emb[j]) > params.epsilon);
                }
            }
        }
        icw_weights(&mut c, &embedder, &params).unwrap();
        for cand in &c {
            let expect = if cand.answer_text == shared { 1.0 / k as f64 } else { 1.0 };
            prop_assert!((cand.icw_weight.unwrap() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn selection_is_argmax(weights in prop::collection::vec((0.01f64..1.0, 0usize..900, any::<bool>()), 1..12)) {
        let mut c = candidates(&weights.iter().enumerate().map(|(i, _)| format!("t{i}")).collect::<Vec<_>>());
        for (cand, &(w, start, neg)) in c.iter_mut().zip(&weights) {
            cand.icw_weight = Some(w);
            cand.chunk_word_range = (start, start + 100);
            if neg {
                cand.is_negative = true;
                cand.answer_text = "Does not exist".into();
            }
        }
        let r = select("d", 0, c, None, 1000, Combiner::Product).unwrap();
        let positives: Vec<_> = r.all_candidates.iter().filter(|c| !c.is_negative).collect();
        match r.chosen {
            None => prop_assert!(positives.is_empty()),
            Some(ch) => {
                let best = positives.iter().map(|c| c.final_score.unwrap()).fold(f64::MIN, f64::max);
                prop_assert_eq!(ch.final_score.unwrap(), best);
                prop_assert!(!ch.is_negative);
            }
        }
    }

    #[test]
    fn scaling_icw_by_power_of_two_keeps_choice(weights in prop::collection::vec(0.01f64..1.0, 1..10), exp in -4i32..4) {
        let make = |scale: f64| {
            let mut c = candidates(&weights.iter().enumerate().map(|(i, _)| format!("t{i}")).collect::<Vec<_>>());
            for (cand, w) in c.iter_mut().zip(&weights) {
                cand.icw_weight = Some(w * scale);
            }
            select("d", 0, c, None, 100, Combiner::Product).unwrap().chosen.unwrap().chunk_index
        };
        prop_assert_eq!(make(1.0), make(2f64.powi(exp)));
    }
}

proptest! {
    #[test]
    fn metric_bounds_and_identity(a in "[a-e ]{0,30}", b in "[a-e ]{0,30}") {
        for s in [rouge_l_f1::<f64>(&a, &b), rouge_1_f1(&a, &b), meteor(&a, &b)] {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&s));
        }
        if !a.trim().is_empty() {
            prop_assert!((rouge_l_f1::<f64>(&a, &a) - 1.0).abs() < 1e-12);
            prop_assert!((rouge_1_f1::<f64>(&a, &a) - 1.0).abs() < 1e-12);
        }
        prop_assert!(rouge_l_f1::<f64>(&a, &b) <= rouge_1_f1::<f64>(&a, &b) + 1e-12);
    }

    #[test]
    fn disjoint_tokens_score_zero(a in "[a-m]{1,8}( [a-m]{1,8}){0,5}", b in "[n-z]{1,8}( [n-z]{1,8}){0,5}") {
        prop_assert_eq!(rouge_l_f1::<f64>(&a, &b), 0.0);
        prop_assert_eq!(meteor::<f64>(&a, &b), 0.0);
    }

    #[test]
    fn raising_threshold_never_adds_correctness(r in 0.0f64..1.0, m in 0.0f64..1.0, c in -1.0f64..1.0, bump in 0.0f64..0.5) {
        let low = Thresholds::<f64>::default();
        let high = Thresholds { rouge: low.rouge + bump, meteor: low.meteor + bump, cosine: low.cosine + bump };
        let a = MetricScore::new(r, m, c, &low);
        let b = MetricScore::new(r, m, c, &high);
        prop_assert!(b.correct_by.is_subset(&a.correct_by));
    }
}

#[test]
fn all_combinations_valid_and_distinct() {
    let sets = enumerate_combinations(&TechniqueKind::ALL);
    assert_eq!(sets.len(), 72);
    let distinct: BTreeSet<String> = sets.iter().map(|s| s.label()).collect();
    assert_eq!(distinct.len(), 72);
    assert!(sets.iter().all(|s| s.is_valid()));
}
