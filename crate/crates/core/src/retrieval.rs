//! Top-N selection of samples from a hold-out feature set, either along a
//! single unit or along a semantic direction.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::sevec::{cosine_f64, SemanticVector};

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub row: usize,
    pub sample_id: String,
    pub score: f32,
}

fn top_n(mut scored: Vec<(usize, f64)>, n: usize, fs: &FeatureSet) -> Vec<Hit> {
    scored.sort_by(|a, b| match b.1.partial_cmp(&a.1) {
        Some(Ordering::Equal) | None => a.0.cmp(&b.0),
        Some(o) => o,
    });
    scored.truncate(n);
    scored
        .into_iter()
        .map(|(row, score)| Hit {
            row,
            sample_id: fs.sample_id(row).to_string(),
            score: score as f32,
        })
        .collect()
}

/// The `n` rows most cosine-similar to the concept direction, descending,
/// ties by row index. Rows with a zero feature vector are skipped; if fewer
/// than `n` rows remain, all of them are returned.
pub fn retrieve_by_sevec(fs: &FeatureSet, v: &SemanticVector, n: usize) -> Result<Vec<Hit>> {
    if fs.dim() != v.dim() {
        return Err(Error::Dimension {
            expected: v.dim(),
            got: fs.dim(),
        });
    }
    if n == 0 {
        return Err(Error::Parameter("N must be at least 1".into()));
    }
    let scored = fs
        .rows()
        .enumerate()
        .filter_map(|(i, row)| match cosine_f64(row, &v.direction) {
            Ok(c) => Some(Ok((i, c))),
            Err(Error::Domain(_)) => None,
            Err(e) => Some(Err(e)),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(top_n(scored, n, fs))
}

/// The `n` rows with the largest activation of `unit`.
pub fn retrieve_by_unit(fs: &FeatureSet, unit: usize, n: usize) -> Result<Vec<Hit>> {
    if unit >= fs.dim() {
        return Err(Error::Index {
            index: unit,
            len: fs.dim(),
        });
    }
    if n == 0 {
        return Err(Error::Parameter("N must be at least 1".into()));
    }
    let scored = fs
        .rows()
        .enumerate()
        .map(|(i, row)| (i, f64::from(row[unit])))
        .collect();
    Ok(top_n(scored, n, fs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_x() -> SemanticVector {
        SemanticVector::new("x", vec![1.0, 0.0], vec![1.0, 0.0], 1).unwrap()
    }

    fn rows_with_cosines(cosines: &[f32]) -> FeatureSet {
        let rows: Vec<Vec<f32>> = cosines
            .iter()
            .map(|&c| vec![c, (1.0 - c * c).sqrt()])
            .collect();
        FeatureSet::from_rows(&rows).unwrap()
    }

    #[test]
    fn top_two_by_cosine() {
        let fs = rows_with_cosines(&[0.9, 0.1, 0.5]);
        let hits = retrieve_by_sevec(&fs, &unit_x(), 2).unwrap();
        let rows: Vec<usize> = hits.iter().map(|h| h.row).collect();
        assert_eq!(rows, vec![0, 2]);
        assert!((hits[0].score - 0.9).abs() < 1e-6);
    }

    #[test]
    fn ties_by_row_index_and_clamping() {
        let fs = FeatureSet::from_rows(&vec![vec![1.0, 1.0]; 3]).unwrap();
        let hits = retrieve_by_sevec(&fs, &unit_x(), 2).unwrap();
        assert_eq!(hits.iter().map(|h| h.row).collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(retrieve_by_sevec(&fs, &unit_x(), 10).unwrap().len(), 3);
    }

    #[test]
    fn zero_rows_excluded_and_dimension_checked() {
        let fs = FeatureSet::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let hits = retrieve_by_sevec(&fs, &unit_x(), 5).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].sample_id, "id_1");
        let wide = FeatureSet::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(
            retrieve_by_sevec(&wide, &unit_x(), 1),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn by_unit() {
        let fs = FeatureSet::from_rows(&[vec![0.1, 0.0], vec![5.0, 0.0], vec![2.0, 0.0]]).unwrap();
        let one = retrieve_by_unit(&fs, 0, 1).unwrap();
        assert_eq!(one[0].row, 1);
        let two = retrieve_by_unit(&fs, 0, 2).unwrap();
        assert_eq!(two.iter().map(|h| h.row).collect::<Vec<_>>(), vec![1, 2]);
        assert!(matches!(
            retrieve_by_unit(&fs, 2, 1),
            Err(Error::Index { index: 2, len: 2 })
        ));
    }

    proptest! {
        #[test]
        fn matches_brute_force_sort(
            rows in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 4), 1..30),
            dir in prop::collection::vec(0.0f32..1.0, 4),
            n in 1usize..40,
        ) {
            let norm = dir.iter().map(|x| x * x).sum::<f32>().sqrt();
            prop_assume!(norm > 1e-3);
            let dir: Vec<f32> = dir.iter().map(|x| x / norm).collect();
            let v = SemanticVector { concept: "c".into(), direction: dir.clone(), rate: vec![0.5; 4], sample_count: 1 };
            let fs = FeatureSet::from_rows(&rows).unwrap();
            let hits = retrieve_by_sevec(&fs, &v, n).unwrap();

            // brute force: score every usable row, full selection sort
            let mut all: Vec<(usize, f64)> = Vec::new();
            for (i, r) in rows.iter().enumerate() {
                let dot: f64 = r.iter().zip(&dir).map(|(&a, &b)| a as f64 * b as f64).sum();
                let nr: f64 = r.iter().map(|&a| a as f64 * a as f64).sum::<f64>().sqrt();
                let nd: f64 = dir.iter().map(|&a| a as f64 * a as f64).sum::<f64>().sqrt();
                if nr > 0.0 { all.push((i, dot / (nr * nd))); }
            }
            let mut expected = Vec::new();
            while !all.is_empty() && expected.len() < n {
                let mut best = 0;
                for k in 1..all.len() {
                    if all[k].1 > all[best].1 { best = k; }
                }
                expected.push(all.remove(best).0);
            }
            prop_assert_eq!(hits.iter().map(|h| h.row).collect::<Vec<_>>(), expected);
        }
    }
}
