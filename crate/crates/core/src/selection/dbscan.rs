//! DBSCAN over unit embeddings with cosine distance.
//!
//! A point is core when at least `min_points` points (itself included) lie
//! within `epsilon`. Points are scanned in input order; each unlabelled core
//! point seeds a new cluster that grows through density-reachable points.
//! A border point keeps the first cluster that reaches it.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::SelectionError;
use crate::inference::{cosine_distance, EmbeddingVector};
use crate::scalar::Scalar;

pub const NOISE: i64 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DbscanParams<T = f64> {
    pub epsilon: T,
    pub min_points: usize,
}

impl<T: Scalar> Default for DbscanParams<T> {
    /// `epsilon = 1 - 0.79`, the cosine-similarity correctness threshold
    /// expressed as a distance.
    fn default() -> Self {
        Self {
            epsilon: T::from_f64_lossy(0.21),
            min_points: 2,
        }
    }
}

impl<T: Scalar> DbscanParams<T> {
    pub fn validate(&self) -> Result<(), SelectionError> {
        if !(self.epsilon > T::zero()) {
            return Err(SelectionError::InvalidParams("epsilon must be > 0".into()));
        }
        if self.min_points == 0 {
            return Err(SelectionError::InvalidParams(
                "min_points must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// `-1` for noise, otherwise the cluster id, parallel to the input.
    pub labels: Vec<i64>,
    pub group_sizes: BTreeMap<i64, usize>,
}

impl ClusterAssignment {
    /// Group size a point counts against; noise points are their own group.
    pub fn effective_group_size(&self, i: usize) -> usize {
        match self.labels[i] {
            NOISE => 1,
            l => self.group_sizes[&l],
        }
    }

    pub fn n_clusters(&self) -> usize {
        self.group_sizes.len()
    }
}

pub fn dbscan<T: Scalar>(
    points: &[EmbeddingVector<T>],
    params: &DbscanParams<T>,
) -> Result<ClusterAssignment, SelectionError> {
    params.validate()?;
    if let Some(first) = points.first() {
        if let Some(p) = points.iter().find(|p| p.dimension() != first.dimension()) {
            return Err(SelectionError::DimensionMismatch(
                first.dimension(),
                p.dimension(),
            ));
        }
    }
    let n = points.len();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| cosine_distance(&points[i], &points[j]) <= params.epsilon)
                .collect()
        })
        .collect();
    let is_core: Vec<bool> = neighbors
        .iter()
        .map(|nb| nb.len() >= params.min_points)
        .collect();

    let mut labels: Vec<Option<i64>> = vec![None; n];
    let mut next = 0i64;
    for seed in 0..n {
        if labels[seed].is_some() || !is_core[seed] {
            continue;
        }
        let cluster = next;
        next += 1;
        labels[seed] = Some(cluster);
        let mut queue = VecDeque::from([seed]);
        while let Some(p) = queue.pop_front() {
            for &q in &neighbors[p] {
                if labels[q].is_none() {
                    labels[q] = Some(cluster);
                    if is_core[q] {
                        queue.push_back(q);
                    }
                }
            }
        }
    }

    let labels: Vec<i64> = labels.into_iter().map(|l| l.unwrap_or(NOISE)).collect();
    let mut group_sizes = BTreeMap::new();
    for &l in labels.iter().filter(|&&l| l != NOISE) {
        *group_sizes.entry(l).or_insert(0) += 1;
    }
    Ok(ClusterAssignment {
        labels,
        group_sizes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> EmbeddingVector<f64> {
        EmbeddingVector::normalized(x.to_vec()).unwrap()
    }

    fn params(epsilon: f64, min_points: usize) -> DbscanParams<f64> {
        DbscanParams {
            epsilon,
            min_points,
        }
    }

    #[test]
    fn three_identical_one_orthogonal() {
        let pts = vec![
            v(&[1.0, 0.0]),
            v(&[1.0, 0.0]),
            v(&[0.0, 1.0]),
            v(&[1.0, 0.0]),
        ];
        let a = dbscan(&pts, &params(0.1, 2)).unwrap();
        assert_eq!(a.labels, vec![0, 0, NOISE, 0]);
        assert_eq!(a.group_sizes, BTreeMap::from([(0, 3)]));
        assert_eq!(a.effective_group_size(2), 1);
    }

    #[test]
    fn all_far_apart_is_noise() {
        let pts = vec![
            v(&[1.0, 0.0, 0.0]),
            v(&[0.0, 1.0, 0.0]),
            v(&[0.0, 0.0, 1.0]),
        ];
        let a = dbscan(&pts, &params(0.5, 2)).unwrap();
        assert!(a.labels.iter().all(|l| *l == NOISE));
        assert_eq!(a.n_clusters(), 0);
    }

    #[test]
    fn min_points_one_gives_components() {
        // chain a~b~c (consecutive 30 degrees apart), d far away
        let deg = |d: f64| v(&[d.to_radians().cos(), d.to_radians().sin()]);
        let pts = vec![deg(0.0), deg(30.0), deg(60.0), deg(180.0)];
        let eps = 1.0 - 30f64.to_radians().cos() + 1e-9;
        let a = dbscan(&pts, &params(eps, 1)).unwrap();
        assert_eq!(a.labels, vec![0, 0, 0, 1]);
    }

    #[test]
    fn border_point_keeps_first_cluster() {
        // b at 11 degrees is a non-core neighbor of the cores at 2 and 20 degrees
        let deg = |d: f64| v(&[d.to_radians().cos(), d.to_radians().sin()]);
        let angles = [0.0, 0.5, 1.0, 1.5, 2.0, 11.0, 20.0, 20.5, 21.0, 21.5, 22.0];
        let pts: Vec<_> = angles.iter().map(|a| deg(*a)).collect();
        let eps = 1.0 - 9.2f64.to_radians().cos();
        let a = dbscan(&pts, &params(eps, 5)).unwrap();
        assert_eq!(a.labels, vec![0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
        assert_eq!(a.group_sizes, BTreeMap::from([(0, 6), (1, 5)]));
    }

    #[test]
    fn empty_and_invalid() {
        let a = dbscan::<f64>(&[], &params(0.2, 2)).unwrap();
        assert!(a.labels.is_empty());
        assert!(dbscan::<f64>(&[], &params(0.0, 2)).is_err());
        assert!(dbscan::<f64>(&[], &params(0.2, 0)).is_err());
        let mixed = vec![v(&[1.0, 0.0]), v(&[1.0, 0.0, 0.0])];
        assert!(matches!(
            dbscan(&mixed, &params(0.2, 2)),
            Err(SelectionError::DimensionMismatch(2, 3))
        ));
    }
}
