use serde::{Deserialize, Serialize};

use super::BackendError;
use crate::scalar::Scalar;

pub const FALLBACK_DIMENSION: usize = 512;

/// A unit-norm embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EmbeddingVector<T = f64> {
    values: Vec<T>,
}

impl<T: Scalar> EmbeddingVector<T> {
    /// L2-normalizes `values`. Fails on an empty or all-zero vector.
    pub fn normalized(values: Vec<T>) -> Result<Self, BackendError> {
        if values.is_empty() {
            return Err(BackendError::Embedding("empty embedding".into()));
        }
        let norm = values.iter().fold(T::zero(), |acc, v| acc + *v * *v).sqrt();
        if !(norm > T::zero()) || !norm.is_finite() {
            return Err(BackendError::Embedding(
                "zero or non-finite embedding".into(),
            ));
        }
        Ok(Self {
            values: values.into_iter().map(|v| v / norm).collect(),
        })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn dot(&self, other: &Self) -> T {
        self.values
            .iter()
            .zip(&other.values)
            .fold(T::zero(), |acc, (a, b)| acc + *a * *b)
    }

    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }
}

pub fn cosine_similarity<T: Scalar>(a: &EmbeddingVector<T>, b: &EmbeddingVector<T>) -> T {
    a.dot(b)
}

/// `1 - dot`, clamped to `[0, 2]` against rounding.
pub fn cosine_distance<T: Scalar>(a: &EmbeddingVector<T>, b: &EmbeddingVector<T>) -> T {
    let two = T::one() + T::one();
    (T::one() - a.dot(b)).max(T::zero()).min(two)
}

pub trait Embedder<T: Scalar>: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector<T>, BackendError>;
}

/// Offline embedder: hashed bag of character trigrams, L2-normalized.
///
/// Text is lowercased and whitespace-collapsed, then padded with one space on
/// each side before trigrams are taken.
#[derive(Debug, Clone, Copy)]
pub struct FallbackEmbedder {
    pub dimension: usize,
}

impl Default for FallbackEmbedder {
    fn default() -> Self {
        Self {
            dimension: FALLBACK_DIMENSION,
        }
    }
}

fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    bytes.into_iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl FallbackEmbedder {
    pub fn features(&self, text: &str) -> Vec<usize> {
        let normalized = text
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
            .to_lowercase();
        if normalized.is_empty() {
            return Vec::new();
        }
        let chars: Vec<char> = format!(" {normalized} ").chars().collect();
        chars
            .windows(3)
            .map(|w| {
                let mut buf = [0u8; 12];
                let mut n = 0;
                for c in w {
                    n += c.encode_utf8(&mut buf[n..]).len();
                }
                (fnv1a(buf[..n].iter().copied()) % self.dimension as u64) as usize
            })
            .collect()
    }
}

impl<T: Scalar> Embedder<T> for FallbackEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector<T>, BackendError> {
        let feats = self.features(text);
        if feats.is_empty() {
            return Err(BackendError::Embedding("no features in empty text".into()));
        }
        let mut v = vec![T::zero(); self.dimension];
        for f in feats {
            v[f] += T::one();
        }
        EmbeddingVector::normalized(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn emb(s: &str) -> EmbeddingVector<f64> {
        FallbackEmbedder::default().embed(s).unwrap()
    }

    #[test]
    fn identical_texts_identical_vectors() {
        let (a, b) = (emb("effective date"), emb("effective date"));
        assert_eq!(a, b);
        assert!(cosine_distance(&a, &b).abs() < 1e-12);
        assert!((a.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_trigrams_are_orthogonal() {
        let fe = FallbackEmbedder::default();
        let (fa, fb) = (fe.features("abc"), fe.features("xyz"));
        assert!(fa.iter().all(|f| !fb.contains(f)));
        assert_eq!(cosine_similarity(&emb("abc"), &emb("xyz")), 0.0);
    }

    /// Oracle: exact cosine over unhashed trigram multisets.
    fn exact_trigram_cosine(a: &str, b: &str) -> f64 {
        let bag = |s: &str| {
            let chars: Vec<char> = format!(" {} ", s.to_lowercase()).chars().collect();
            let mut m: HashMap<String, f64> = HashMap::new();
            for w in chars.windows(3) {
                *m.entry(w.iter().collect()).or_default() += 1.0;
            }
            m
        };
        let (x, y) = (bag(a), bag(b));
        let dot: f64 = x
            .iter()
            .map(|(k, v)| v * y.get(k).copied().unwrap_or(0.0))
            .sum();
        let n = |m: &HashMap<String, f64>| m.values().map(|v| v * v).sum::<f64>().sqrt();
        dot / (n(&x) * n(&y))
    }

    #[test]
    fn overlap_orders_similarity() {
        let base = "the effective date";
        let near = cosine_similarity(&emb(base), &emb("the effective date is"));
        let far = cosine_similarity(&emb(base), &emb("governing law clause"));
        // " the effective date " has 18 trigrams, all shared with the longer text,
        // which adds 3 more: 18 / sqrt(18 * 21) ~= 0.926. The unrelated text shares none.
        let expected = exact_trigram_cosine(base, "the effective date is");
        assert!((expected - 18.0 / (18.0f64 * 21.0).sqrt()).abs() < 1e-12);
        assert_eq!(exact_trigram_cosine(base, "governing law clause"), 0.0);
        assert!((near - expected).abs() < 0.05);
        assert!(near > far);
    }

    #[test]
    fn empty_text_is_error() {
        assert!(
            <FallbackEmbedder as Embedder<f64>>::embed(&FallbackEmbedder::default(), "  ").is_err()
        );
        assert!(EmbeddingVector::<f32>::normalized(vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn works_for_f32() {
        let v: EmbeddingVector<f32> = FallbackEmbedder::default().embed("parties").unwrap();
        assert!((v.norm() - 1.0).abs() < 1e-6);
        assert_eq!(v.dimension(), FALLBACK_DIMENSION);
    }
}
