//! Semantic vectors: binarized feature patterns, the closed-form concept
//! direction, and the cosine geometry built on top of it.
//!
//! For a concept with binarized samples `a_1..a_M`, the direction maximizing
//! `sum_i cos(a_i, v)` over unit vectors is `A / |A|` with
//! `A = sum_i a_i / |a_i|`. Each coordinate of `A` is a weighted count of
//! how often the unit fires for the concept, which is why the per-unit
//! activation rate is carried alongside the direction.

use crate::error::{Error, Result};
use crate::features::FeatureSet;

/// Rows of `{0,1}` activation indicators. No row is all zeros.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryFeatureMatrix {
    dim: usize,
    rows: Vec<u8>,
    sample_ids: Vec<String>,
}

impl BinaryFeatureMatrix {
    pub fn new(dim: usize, rows: Vec<u8>, sample_ids: Vec<String>) -> Result<Self> {
        if dim == 0 || rows.len() != dim * sample_ids.len() {
            return Err(Error::Parameter(format!(
                "{} entries do not form {} rows of width {dim}",
                rows.len(),
                sample_ids.len()
            )));
        }
        if rows.iter().any(|&x| x > 1) {
            return Err(Error::Parameter("binary matrix entries must be 0 or 1".into()));
        }
        if let Some(i) = rows.chunks_exact(dim).position(|r| r.iter().all(|&x| x == 0)) {
            return Err(Error::Parameter(format!("row {i} is all zeros")));
        }
        Ok(BinaryFeatureMatrix {
            dim,
            rows,
            sample_ids,
        })
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let dim = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::EmptyInput("no rows".into()))?;
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Parameter("ragged rows".into()));
        }
        let ids = (0..rows.len()).map(|i| format!("id_{i}")).collect();
        BinaryFeatureMatrix::new(dim, rows.concat(), ids)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.rows.chunks_exact(self.dim)
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }
}

/// Result of [`binarize`]: the indicator matrix plus ids of rows that had no
/// active unit and were removed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Binarized {
    pub matrix: BinaryFeatureMatrix,
    pub dropped: Vec<String>,
}

/// Replaces every feature by `1` if strictly positive, else `0`.
pub fn binarize(fs: &FeatureSet) -> Result<Binarized> {
    if fs.is_empty() {
        return Err(Error::EmptyInput("feature set has no rows".into()));
    }
    let mut rows = Vec::with_capacity(fs.data().len());
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (i, row) in fs.rows().enumerate() {
        if row.iter().any(|&x| x > 0.0) {
            rows.extend(row.iter().map(|&x| u8::from(x > 0.0)));
            kept.push(fs.sample_id(i).to_string());
        } else {
            dropped.push(fs.sample_id(i).to_string());
        }
    }
    if kept.is_empty() {
        return Err(Error::EmptyInput(format!(
            "all {} rows have no active unit",
            fs.len()
        )));
    }
    Ok(Binarized {
        matrix: BinaryFeatureMatrix::new(fs.dim(), rows, kept)?,
        dropped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticVector {
    pub concept: String,
    /// Unit-norm, nonnegative.
    pub direction: Vec<f32>,
    /// Fraction of the concept's samples in which each unit is active.
    pub rate: Vec<f32>,
    pub sample_count: usize,
}

impl SemanticVector {
    pub fn new(
        concept: impl Into<String>,
        direction: Vec<f32>,
        rate: Vec<f32>,
        sample_count: usize,
    ) -> Result<Self> {
        let concept = concept.into();
        if direction.len() != rate.len() {
            return Err(Error::Dimension {
                expected: direction.len(),
                got: rate.len(),
            });
        }
        if sample_count == 0 {
            return Err(Error::Parameter(format!("'{concept}': sample_count is 0")));
        }
        let norm = norm_f64(&direction);
        if (norm - 1.0).abs() > 1e-5 {
            return Err(Error::Parameter(format!(
                "'{concept}': direction norm {norm} is not 1"
            )));
        }
        if direction.iter().any(|&x| x.is_nan() || x < 0.0) {
            return Err(Error::Parameter(format!(
                "'{concept}': direction has negative entries"
            )));
        }
        if rate.iter().any(|&r| !(0.0..=1.0).contains(&r)) {
            return Err(Error::Parameter(format!("'{concept}': rate outside [0,1]")));
        }
        Ok(SemanticVector {
            concept,
            direction,
            rate,
            sample_count,
        })
    }

    pub fn dim(&self) -> usize {
        self.direction.len()
    }

    /// Units ordered by activation rate, highest first (ties by index).
    pub fn top_rate_units(&self, count: usize) -> Vec<(usize, f32)> {
        let mut units: Vec<(usize, f32)> = self.rate.iter().copied().enumerate().collect();
        units.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        units.truncate(count);
        units
    }
}

/// Closed-form maximizer of the summed cosine similarity to the rows of `b`.
pub fn compute_sevec(b: &BinaryFeatureMatrix, concept: &str) -> Result<SemanticVector> {
    if b.is_empty() {
        return Err(Error::EmptyInput("binary matrix has no rows".into()));
    }
    let n = b.dim();
    let mut sum = vec![0.0f64; n];
    let mut counts = vec![0usize; n];
    for row in b.rows() {
        let active = row.iter().filter(|&&x| x == 1).count();
        let w = 1.0 / (active as f64).sqrt();
        for (j, &x) in row.iter().enumerate() {
            if x == 1 {
                sum[j] += w;
                counts[j] += 1;
            }
        }
    }
    let norm = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
    let m = b.len() as f64;
    SemanticVector::new(
        concept,
        sum.iter().map(|x| (x / norm) as f32).collect(),
        counts.iter().map(|&c| (c as f64 / m) as f32).collect(),
        b.len(),
    )
}

pub(crate) fn norm_f64(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

/// Cosine similarity in f64 precision. Errors on length mismatch or a zero
/// vector.
pub(crate) fn cosine_f64(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Dimension {
            expected: u.len(),
            got: v.len(),
        });
    }
    let (mut dot, mut uu, mut vv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (f64::from(a), f64::from(b));
        dot += a * b;
        uu += a * a;
        vv += b * b;
    }
    if uu == 0.0 || vv == 0.0 {
        return Err(Error::Domain("cosine similarity of a zero vector".into()));
    }
    Ok((dot / (uu.sqrt() * vv.sqrt())).clamp(-1.0, 1.0))
}

pub fn cosine_sim(u: &[f32], v: &[f32]) -> Result<f32> {
    cosine_f64(u, v).map(|c| c as f32)
}

/// `1 - cosine_sim`.
pub fn cosine_distance(u: &[f32], v: &[f32]) -> Result<f32> {
    cosine_f64(u, v).map(|c| (1.0 - c) as f32)
}

/// Whether `feature` lies within cosine distance `radius` of the concept
/// direction (strict).
pub fn in_vicinity(feature: &[f32], v: &SemanticVector, radius: f32) -> Result<bool> {
    if !(radius > 0.0 && radius <= 2.0) {
        return Err(Error::Parameter(format!("radius {radius} outside (0, 2]")));
    }
    let dist = 1.0 - cosine_f64(feature, &v.direction)?;
    Ok(dist < f64::from(radius))
}

pub const DEFAULT_MASK_THRESHOLD: f32 = 0.5;

/// Per-unit keep/suppress flags derived from a semantic vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask(Vec<bool>);

impl Mask {
    pub fn new(bits: Vec<bool>) -> Self {
        Mask(bits)
    }

    pub fn ones(len: usize) -> Self {
        Mask(vec![true; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn popcount(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    pub fn into_bits(self) -> Vec<bool> {
        self.0
    }
}

/// Keeps units whose activation rate exceeds `threshold` (strict).
pub fn mask_from_sevec(v: &SemanticVector, threshold: f32) -> Result<Mask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Parameter(format!("threshold {threshold} outside (0, 1)")));
    }
    Ok(Mask(v.rate.iter().map(|&r| r > threshold).collect()))
}

/// One minus the mean cosine similarity between the concept's binarized
/// samples and its direction.
pub fn diversity(b: &BinaryFeatureMatrix, v: &SemanticVector) -> Result<f64> {
    if b.is_empty() {
        return Err(Error::EmptyInput("binary matrix has no rows".into()));
    }
    if b.dim() != v.dim() {
        return Err(Error::Dimension {
            expected: v.dim(),
            got: b.dim(),
        });
    }
    let dir_norm = norm_f64(&v.direction);
    let mut total = 0.0f64;
    for row in b.rows() {
        let active = row.iter().filter(|&&x| x == 1).count() as f64;
        let dot: f64 = row
            .iter()
            .zip(&v.direction)
            .filter(|(&x, _)| x == 1)
            .map(|(_, &d)| f64::from(d))
            .sum();
        total += dot / (active.sqrt() * dir_norm);
    }
    Ok((1.0 - total / b.len() as f64).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fs(rows: &[Vec<f32>]) -> FeatureSet {
        FeatureSet::from_rows(rows).unwrap()
    }

    #[test]
    fn binarize_sign_pattern() {
        let out = binarize(&fs(&[vec![0.5, 0.0, -0.2], vec![1.2, 3.0, 0.0]])).unwrap();
        assert_eq!(out.matrix.row(0), [1, 0, 0]);
        assert_eq!(out.matrix.row(1), [1, 1, 0]);
        assert!(out.dropped.is_empty());
    }

    #[test]
    fn binarize_drops_zero_rows() {
        let out = binarize(&fs(&[vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]])).unwrap();
        assert_eq!(out.matrix.len(), 1);
        assert_eq!(out.matrix.row(0), [1, 0, 0]);
        assert_eq!(out.dropped, vec!["id_0".to_string()]);
        assert_eq!(out.matrix.sample_ids(), ["id_1"]);
    }

    #[test]
    fn binarize_all_dropped() {
        assert!(matches!(
            binarize(&fs(&[vec![0.0, 0.0]])),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn closed_form_two_rows() {
        let b = BinaryFeatureMatrix::from_rows(&[vec![1, 0, 0], vec![1, 1, 0]]).unwrap();
        let v = compute_sevec(&b, "c").unwrap();
        // A = (1 + 1/sqrt2, 1/sqrt2, 0), |A| = 1.847759...
        let a0 = 1.0 + std::f64::consts::FRAC_1_SQRT_2;
        let a1 = std::f64::consts::FRAC_1_SQRT_2;
        let norm = (a0 * a0 + a1 * a1).sqrt();
        assert!((norm - 1.847_759).abs() < 1e-6);
        assert!((f64::from(v.direction[0]) - a0 / norm).abs() < 1e-6);
        assert!((f64::from(v.direction[1]) - a1 / norm).abs() < 1e-6);
        assert!((v.direction[0] - 0.9239).abs() < 1e-4);
        assert!((v.direction[1] - 0.3827).abs() < 1e-4);
        assert_eq!(v.direction[2], 0.0);
        assert_eq!(v.rate, vec![1.0, 0.5, 0.0]);
        assert_eq!(v.sample_count, 2);
    }

    #[test]
    fn single_row_and_identical_rows() {
        let b = BinaryFeatureMatrix::from_rows(&[vec![0, 1, 0]]).unwrap();
        let v = compute_sevec(&b, "c").unwrap();
        assert_eq!(v.direction, vec![0.0, 1.0, 0.0]);
        assert_eq!(v.rate, vec![0.0, 1.0, 0.0]);

        let b = BinaryFeatureMatrix::from_rows(&vec![vec![1, 1, 0, 1]; 5]).unwrap();
        let v = compute_sevec(&b, "c").unwrap();
        let expect = 1.0 / 3f32.sqrt();
        for (j, &d) in v.direction.iter().enumerate() {
            if j == 2 {
                assert_eq!(d, 0.0);
            } else {
                assert!((d - expect).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn cosine_cases() {
        assert!((cosine_sim(&[0.3, -2.0], &[0.3, -2.0]).unwrap() - 1.0).abs() < 1e-7);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_sim(&[1.0, 1.0, 0.0], &[1.0, 0.0, 0.0]).unwrap() - std::f32::consts::FRAC_1_SQRT_2).abs() < 1e-5);
        assert!(matches!(
            cosine_sim(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::Domain(_))
        ));
        assert!(cosine_sim(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn vicinity_cases() {
        let v = SemanticVector::new("c", vec![1.0, 0.0], vec![1.0, 0.0], 1).unwrap();
        assert!(in_vicinity(&[3.0, 0.0], &v, 1e-3).unwrap());
        assert!(!in_vicinity(&[0.0, 1.0], &v, 0.5).unwrap());
        // cosine 0.8 -> distance 0.2
        assert!(in_vicinity(&[0.8, 0.6], &v, 0.25).unwrap());
        assert!(!in_vicinity(&[0.8, 0.6], &v, 0.15).unwrap());
        assert!(matches!(
            in_vicinity(&[0.0, 0.0], &v, 0.5),
            Err(Error::Domain(_))
        ));
        assert!(in_vicinity(&[1.0, 0.0], &v, 0.0).is_err());
    }

    #[test]
    fn mask_threshold_is_strict() {
        let v = SemanticVector::new("c", vec![1.0, 0.0, 0.0], vec![1.0, 0.5, 0.0], 2).unwrap();
        assert_eq!(mask_from_sevec(&v, 0.5).unwrap().bits(), [true, false, false]);
        let v = SemanticVector::new("c", vec![0.6, 0.8], vec![1.0, 1.0], 2).unwrap();
        assert_eq!(mask_from_sevec(&v, 0.5).unwrap().popcount(), 2);
        let v = SemanticVector::new("c", vec![0.6, 0.8], vec![0.95, 0.8], 2).unwrap();
        assert_eq!(mask_from_sevec(&v, 0.9).unwrap().bits(), [true, false]);
        assert!(mask_from_sevec(&v, 1.0).is_err());
    }

    #[test]
    fn diversity_cases() {
        let b = BinaryFeatureMatrix::from_rows(&vec![vec![1, 0, 1, 1]; 7]).unwrap();
        let v = compute_sevec(&b, "c").unwrap();
        assert!(diversity(&b, &v).unwrap().abs() < 1e-12);

        let b = BinaryFeatureMatrix::from_rows(&[vec![1, 0], vec![0, 1]]).unwrap();
        let v = compute_sevec(&b, "c").unwrap();
        let expect = 1.0 - std::f64::consts::FRAC_1_SQRT_2;
        assert!((diversity(&b, &v).unwrap() - expect).abs() < 1e-7);
        assert!((expect - 0.29289).abs() < 1e-5);
    }

    #[test]
    fn top_rate_units_order() {
        let v = SemanticVector::new("c", vec![0.6, 0.8, 0.0], vec![0.5, 1.0, 0.5], 2).unwrap();
        assert_eq!(v.top_rate_units(2), vec![(1, 1.0), (0, 0.5)]);
    }

    fn arb_features() -> impl Strategy<Value = (usize, Vec<f32>)> {
        (1usize..8, 1usize..12).prop_flat_map(|(m, n)| {
            (
                Just(n),
                prop::collection::vec(prop_oneof![Just(0.0f32), -2.0f32..2.0], m * n),
            )
        })
    }

    proptest! {
        #[test]
        fn scale_invariance((n, data) in arb_features(), scale in 0.01f32..100.0) {
            let m = data.len() / n;
            let ids: Vec<String> = (0..m).map(|i| i.to_string()).collect();
            let a = FeatureSet::new(n, data.clone(), ids.clone(), None).unwrap();
            let b = FeatureSet::new(n, data.iter().map(|x| x * scale).collect(), ids, None).unwrap();
            match (binarize(&a), binarize(&b)) {
                (Ok(x), Ok(y)) => {
                    prop_assert_eq!(&x, &y);
                    prop_assert_eq!(compute_sevec(&x.matrix, "c").unwrap(), compute_sevec(&y.matrix, "c").unwrap());
                }
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "binarize disagreed under scaling"),
            }
        }

        #[test]
        fn permutation_equivariance(rows in prop::collection::vec(prop::collection::vec(0u8..2, 6), 1..10), seed in any::<u64>()) {
            let rows: Vec<Vec<u8>> = rows.into_iter().filter(|r| r.contains(&1)).collect();
            prop_assume!(!rows.is_empty());
            let mut perm: Vec<usize> = (0..6).collect();
            use rand::seq::SliceRandom;
            perm.shuffle(&mut crate::rng::seeded(seed));
            let permuted: Vec<Vec<u8>> = rows.iter().map(|r| perm.iter().map(|&p| r[p]).collect()).collect();
            let v = compute_sevec(&BinaryFeatureMatrix::from_rows(&rows).unwrap(), "c").unwrap();
            let w = compute_sevec(&BinaryFeatureMatrix::from_rows(&permuted).unwrap(), "c").unwrap();
            for (j, &p) in perm.iter().enumerate() {
                prop_assert_eq!(w.direction[j], v.direction[p]);
                prop_assert_eq!(w.rate[j], v.rate[p]);
            }
        }

        #[test]
        fn sevec_invariants_and_diversity_range(rows in prop::collection::vec(prop::collection::vec(0u8..2, 1..10), 1..20)) {
            let n = rows[0].len();
            let rows: Vec<Vec<u8>> = rows.into_iter().map(|mut r| { r.resize(n, 0); r }).filter(|r| r.contains(&1)).collect();
            prop_assume!(!rows.is_empty());
            let b = BinaryFeatureMatrix::from_rows(&rows).unwrap();
            let v = compute_sevec(&b, "c").unwrap();
            prop_assert!((norm_f64(&v.direction) - 1.0).abs() < 1e-6);
            prop_assert!(v.direction.iter().all(|&x| x >= 0.0));
            prop_assert!(v.rate.iter().all(|&r| (0.0..=1.0).contains(&r)));
            let d = diversity(&b, &v).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
            if rows.iter().all(|r| r == &rows[0]) {
                prop_assert!(d.abs() < 1e-12);
            }
        }
    }
}
