//! Cosine-distance clustering of a concept's binarized samples, used to
//! look for multiple facets of one concept.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::sevec::BinaryFeatureMatrix;

pub const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct FacetClustering {
    pub assignments: Vec<usize>,
    /// Unit-norm centroids.
    pub centroids: Vec<Vec<f32>>,
    /// Assignment passes performed.
    pub iterations: usize,
    /// Mean cosine to the assigned centroid after each assignment pass.
    pub objective_history: Vec<f64>,
}

impl FacetClustering {
    pub fn objective(&self) -> f64 {
        *self.objective_history.last().expect("at least one pass")
    }
}

fn normalized_rows(b: &BinaryFeatureMatrix) -> Vec<Vec<f64>> {
    b.rows()
        .map(|row| {
            let w = 1.0 / (row.iter().filter(|&&x| x == 1).count() as f64).sqrt();
            row.iter().map(|&x| f64::from(x) * w).collect()
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut total = 0.0;
    let labels = points
        .iter()
        .map(|p| {
            let mut best = (0, f64::NEG_INFINITY);
            for (j, c) in centroids.iter().enumerate() {
                let s = dot(p, c);
                if s > best.1 {
                    best = (j, s);
                }
            }
            total += best.1;
            best.0
        })
        .collect();
    (labels, total / points.len() as f64)
}

/// k-means++ seeding with squared cosine distance as the sampling weight.
fn seed_centroids(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seeded(seed);
    let mut chosen = vec![rng.random_range(0..points.len())];
    let mut nearest: Vec<f64> = points
        .iter()
        .map(|p| 1.0 - dot(p, &points[chosen[0]]))
        .collect();
    while chosen.len() < k {
        let weights: Vec<f64> = nearest.iter().map(|d| d.max(0.0).powi(2)).collect();
        let total: f64 = weights.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, w) in weights.iter().enumerate() {
                if *w > 0.0 {
                    pick = Some(i);
                    if target < *w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total weight")
        } else {
            // every point coincides with a chosen centroid
            (0..points.len())
                .find(|i| !chosen.contains(i))
                .expect("k <= M")
        };
        chosen.push(next);
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(1.0 - dot(p, &points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

/// Spherical k-means: points and centroids live on the unit sphere and each
/// centroid is the normalized sum of its members. Stops when assignments
/// repeat or after [`MAX_ITERATIONS`] passes.
pub fn spherical_kmeans(b: &BinaryFeatureMatrix, k: usize, seed: u64) -> Result<FacetClustering> {
    if k == 0 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    if k > b.len() {
        return Err(Error::Parameter(format!("k = {k} exceeds {} samples", b.len())));
    }
    let points = normalized_rows(b);
    let mut centroids = seed_centroids(&points, k, seed);
    let mut history = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut iterations = 0;
    loop {
        let (next, objective) = assign(&points, &centroids);
        iterations += 1;
        history.push(objective);
        let converged = next == labels;
        labels = next;
        if converged || iterations >= MAX_ITERATIONS {
            break;
        }
        for (j, c) in centroids.iter_mut().enumerate() {
            let mut sum = vec![0.0f64; b.dim()];
            let mut members = 0;
            for (p, _) in points.iter().zip(&labels).filter(|(_, &l)| l == j) {
                members += 1;
                for (s, x) in sum.iter_mut().zip(p) {
                    *s += x;
                }
            }
            if members > 0 {
                let norm = dot(&sum, &sum).sqrt();
                *c = sum.iter().map(|x| x / norm).collect();
            }
        }
    }
    Ok(FacetClustering {
        assignments: labels,
        centroids: centroids
            .iter()
            .map(|c| c.iter().map(|&x| x as f32).collect())
            .collect(),
        iterations,
        objective_history: history,
    })
}

/// Size of the largest cluster over the number of samples.
pub fn dominant_cluster_fraction(assignments: &[usize]) -> f32 {
    if assignments.is_empty() {
        return 0.0;
    }
    let mut counts = std::collections::HashMap::new();
    for &a in assignments {
        *counts.entry(a).or_insert(0usize) += 1;
    }
    let largest = counts.values().copied().max().unwrap_or(0);
    largest as f32 / assignments.len() as f32
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sevec::compute_sevec;
    use proptest::prelude::*;

    #[test]
    fn k1_is_the_closed_form_direction() {
        let b = BinaryFeatureMatrix::from_rows(&[
            vec![1, 1, 0, 0],
            vec![1, 0, 1, 0],
            vec![0, 1, 1, 1],
            vec![1, 1, 1, 1],
        ])
        .unwrap();
        let c = spherical_kmeans(&b, 1, 3).unwrap();
        let v = compute_sevec(&b, "c").unwrap();
        for (x, y) in c.centroids[0].iter().zip(&v.direction) {
            assert!((x - y).abs() < 1e-7);
        }
        assert_eq!(c.assignments, vec![0; 4]);
    }

    #[test]
    fn orthogonal_bundles_split() {
        let mut rows = Vec::new();
        for i in 0..6 {
            let mut r = vec![0u8; 8];
            r[0] = 1;
            r[1] = 1;
            r[2 + i % 2] = 1;
            rows.push(r);
            let mut s = vec![0u8; 8];
            s[5] = 1;
            s[6] = 1;
            s[4 + 3 * (i % 2)] = 1;
            rows.push(s);
        }
        let b = BinaryFeatureMatrix::from_rows(&rows).unwrap();
        for seed in 0..10 {
            let c = spherical_kmeans(&b, 2, seed).unwrap();
            let first = c.assignments[0];
            for (i, &a) in c.assignments.iter().enumerate() {
                assert_eq!(a == first, i % 2 == 0, "seed {seed}");
            }
        }
    }

    #[test]
    fn k_equals_m() {
        let b = BinaryFeatureMatrix::from_rows(&[vec![1, 0, 0], vec![0, 1, 0], vec![1, 1, 1]]).unwrap();
        let c = spherical_kmeans(&b, 3, 0).unwrap();
        assert!((c.objective() - 1.0).abs() < 1e-12);
        let mut sorted = c.assignments.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2]);
        assert!(matches!(spherical_kmeans(&b, 4, 0), Err(Error::Parameter(_))));
        assert!(spherical_kmeans(&b, 0, 0).is_err());
    }

    #[test]
    fn dominant_fraction_counts() {
        assert_eq!(dominant_cluster_fraction(&[0, 0, 0, 1]), 0.75);
        assert_eq!(dominant_cluster_fraction(&[2, 2]), 1.0);
        assert!((dominant_cluster_fraction(&[0, 1, 2]) - 1.0 / 3.0).abs() < 1e-7);
    }

    proptest! {
        #[test]
        fn objective_monotone_and_deterministic(
            rows in prop::collection::vec(prop::collection::vec(0u8..2, 10), 2..40),
            k in 1usize..6,
            seed in any::<u64>(),
        ) {
            let rows: Vec<Vec<u8>> = rows.into_iter().filter(|r| r.contains(&1)).collect();
            prop_assume!(rows.len() >= k);
            let b = BinaryFeatureMatrix::from_rows(&rows).unwrap();
            let c = spherical_kmeans(&b, k, seed).unwrap();
            for w in c.objective_history.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-12, "objective dropped: {:?}", c.objective_history);
            }
            for cen in &c.centroids {
                let n: f32 = cen.iter().map(|x| x * x).sum::<f32>().sqrt();
                prop_assert!((n - 1.0).abs() < 1e-5);
            }
            prop_assert_eq!(&c, &spherical_kmeans(&b, k, seed).unwrap());
        }
    }
}
