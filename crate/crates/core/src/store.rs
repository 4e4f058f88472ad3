//! Collections of semantic vectors and the analyses that compare concepts
//! with each other or with individual features.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::manifest::{validate_name, write_lines, Manifest, ManifestEntry, ManifestKind};
use crate::sevec::{cosine_f64, SemanticVector};
use crate::tensor::{read_tensor, write_tensor, Tensor};

/// Concepts keyed by name; all share one dimension. Iteration is in
/// lexicographic name order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptStore {
    dimension: usize,
    vectors: BTreeMap<String, SemanticVector>,
}

impl ConceptStore {
    pub fn new(dimension: usize) -> Self {
        ConceptStore {
            dimension,
            vectors: BTreeMap::new(),
        }
    }

    pub fn from_vectors(vectors: impl IntoIterator<Item = SemanticVector>) -> Result<Self> {
        let mut iter = vectors.into_iter().peekable();
        let dim = iter
            .peek()
            .map(SemanticVector::dim)
            .ok_or_else(|| Error::Store("no vectors".into()))?;
        let mut store = ConceptStore::new(dim);
        for v in iter {
            store.insert(v)?;
        }
        Ok(store)
    }

    /// Adds `v`, replacing any concept of the same name.
    pub fn insert(&mut self, v: SemanticVector) -> Result<()> {
        if v.dim() != self.dimension {
            return Err(Error::Dimension {
                expected: self.dimension,
                got: v.dim(),
            });
        }
        validate_name(&v.concept).map_err(|_| {
            Error::Store(format!("concept name '{}' cannot be stored", v.concept))
        })?;
        self.vectors.insert(v.concept.clone(), v);
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, concept: &str) -> Option<&SemanticVector> {
        self.vectors.get(concept)
    }

    pub fn require(&self, concept: &str) -> Result<&SemanticVector> {
        self.get(concept)
            .ok_or_else(|| Error::Store(format!("unknown concept '{concept}'")))
    }

    pub fn iter(&self) -> impl Iterator<Item = &SemanticVector> {
        self.vectors.values()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vectors.keys().map(String::as_str)
    }

    /// Writes `<dir>/<stem>.manifest` plus one `2 x n` tensor per concept
    /// (row 0 direction, row 1 activation rate).
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = Manifest::new(ManifestKind::ConceptStore);
        manifest.set_attribute("dimension", self.dimension);
        for (i, v) in self.iter().enumerate() {
            let file = format!("{stem}.{i:04}.stf");
            let mut data = v.direction.clone();
            data.extend_from_slice(&v.rate);
            write_tensor(&Tensor::from_f32(vec![2, self.dimension], data)?, dir.join(&file))?;
            manifest.push(
                ManifestEntry::new(v.concept.as_str())
                    .with_path(file)
                    .with("sample_count", v.sample_count),
            )?;
        }
        let path = dir.join(format!("{stem}.manifest"));
        manifest.save(&path)?;
        Ok(path)
    }

    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let manifest = Manifest::load(manifest_path)?;
        manifest.expect_kind(ManifestKind::ConceptStore)?;
        let dimension: usize = manifest
            .attribute("dimension")
            .ok_or_else(|| Error::Manifest("concept store is missing 'dimension'".into()))?
            .parse()
            .map_err(|_| Error::Manifest("bad 'dimension' attribute".into()))?;
        let mut store = ConceptStore::new(dimension);
        for entry in &manifest.entries {
            let tensor = read_tensor(manifest.entry_path(entry)?)?;
            if tensor.shape() != [2, dimension] {
                return Err(Error::Manifest(format!(
                    "concept '{}': expected shape [2, {dimension}], found {:?}",
                    entry.name,
                    tensor.shape()
                )));
            }
            let data = tensor.into_f32()?;
            let count: usize = entry.parse("sample_count")?.ok_or_else(|| {
                Error::Manifest(format!("concept '{}' is missing sample_count", entry.name))
            })?;
            store.insert(SemanticVector::new(
                entry.name.as_str(),
                data[..dimension].to_vec(),
                data[dimension..].to_vec(),
                count,
            )?)?;
        }
        Ok(store)
    }
}

/// The concept whose direction is most cosine-similar to `feature`; ties go
/// to the lexicographically smaller name.
pub fn classify_nearest_sevec(feature: &[f32], store: &ConceptStore) -> Result<(String, f32)> {
    let mut best: Option<(&str, f64)> = None;
    for v in store.iter() {
        let score = cosine_f64(feature, &v.direction)?;
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((&v.concept, score));
        }
    }
    best.map(|(name, s)| (name.to_string(), s as f32))
        .ok_or_else(|| Error::Store("concept store is empty".into()))
}

/// Cosine similarity between two concept directions.
pub fn relevance(a: &SemanticVector, b: &SemanticVector) -> Result<f32> {
    cosine_f64(&a.direction, &b.direction).map(|c| c as f32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceMatrix {
    pub names: Vec<String>,
    /// Row-major `k x k`.
    pub values: Vec<f32>,
}

impl RelevanceMatrix {
    pub fn size(&self) -> usize {
        self.names.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.values[i * self.size() + j]
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::from_f32(vec![self.size(), self.size()], self.values.clone())
    }

    /// Cosine distances `1 - relevance`, for external embedding tools.
    pub fn distance_tensor(&self) -> Result<Tensor> {
        Tensor::from_f32(
            vec![self.size(), self.size()],
            self.values.iter().map(|r| 1.0 - r).collect(),
        )
    }

    /// Writes `<stem>.stf`, `<stem>.distance.stf` and `<stem>.names`.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        write_tensor(&self.to_tensor()?, dir.join(format!("{stem}.stf")))?;
        write_tensor(&self.distance_tensor()?, dir.join(format!("{stem}.distance.stf")))?;
        write_lines(dir.join(format!("{stem}.names")), &self.names)
    }
}

pub fn relevance_matrix(store: &ConceptStore) -> Result<RelevanceMatrix> {
    if store.len() < 2 {
        return Err(Error::Store(format!(
            "relevance matrix needs at least 2 concepts, store has {}",
            store.len()
        )));
    }
    let vectors: Vec<&SemanticVector> = store.iter().collect();
    let k = vectors.len();
    let mut values = vec![0.0f32; k * k];
    for i in 0..k {
        values[i * k + i] = 1.0;
        for j in (i + 1)..k {
            let r = relevance(vectors[i], vectors[j])?;
            values[i * k + j] = r;
            values[j * k + i] = r;
        }
    }
    Ok(RelevanceMatrix {
        names: vectors.iter().map(|v| v.concept.clone()).collect(),
        values,
    })
}

pub const DEFAULT_ABSTAIN_CUTOFF: f32 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Concept { name: String, score: f32 },
    /// No concept in the store reached the cutoff; `best` is the closest.
    Abstain { best: String, score: f32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoleExplanation {
    pub role: String,
    pub verdict: Verdict,
}

/// Explains `feature` with one concept per role-named store (for example a
/// texture store and a material store), abstaining where nothing fits.
pub fn explain_with_concepts(
    feature: &[f32],
    stores: &[(&str, &ConceptStore)],
    abstain_cutoff: f32,
) -> Result<Vec<RoleExplanation>> {
    if stores.is_empty() {
        return Err(Error::Parameter("no concept stores given".into()));
    }
    stores
        .iter()
        .map(|(role, store)| {
            if store.dimension() != feature.len() {
                return Err(Error::Dimension {
                    expected: store.dimension(),
                    got: feature.len(),
                });
            }
            let (name, score) = classify_nearest_sevec(feature, store)?;
            let verdict = if score < abstain_cutoff {
                Verdict::Abstain { best: name, score }
            } else {
                Verdict::Concept { name, score }
            };
            Ok(RoleExplanation {
                role: role.to_string(),
                verdict,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(name: &str, dir: &[f32]) -> SemanticVector {
        let norm = dir.iter().map(|x| x * x).sum::<f32>().sqrt();
        SemanticVector::new(
            name,
            dir.iter().map(|x| x / norm).collect(),
            vec![1.0; dir.len()],
            1,
        )
        .unwrap()
    }

    #[test]
    fn nearest_concept() {
        let store = ConceptStore::from_vectors([sv("zebra", &[1.0, 0.0, 0.0]), sv("cat", &[0.0, 1.0, 0.0])]).unwrap();
        let (name, score) = classify_nearest_sevec(&[2.0, 0.0, 0.0], &store).unwrap();
        assert_eq!(name, "zebra");
        assert!((score - 1.0).abs() < 1e-7);

        // cosines 0.3 and 0.7 against the two stored directions
        let f = [0.3f32, 0.7, (1.0f32 - 0.09 - 0.49).sqrt()];
        let (name, score) = classify_nearest_sevec(&f, &store).unwrap();
        assert_eq!(name, "cat");
        assert!((score - 0.7).abs() < 1e-6);
    }

    #[test]
    fn tie_goes_to_smaller_name() {
        let store = ConceptStore::from_vectors([sv("b", &[1.0, 0.0]), sv("a", &[0.0, 1.0])]).unwrap();
        let (name, _) = classify_nearest_sevec(&[1.0, 1.0], &store).unwrap();
        assert_eq!(name, "a");
        assert!(matches!(
            classify_nearest_sevec(&[1.0, 1.0], &ConceptStore::new(2)),
            Err(Error::Store(_))
        ));
    }

    #[test]
    fn relevance_cases() {
        let a = sv("a", &[0.9239, 0.3827, 0.0]);
        let b = sv("b", &[1.0, 0.0, 0.0]);
        let c = sv("c", &[0.0, 0.0, 1.0]);
        assert!((relevance(&a, &a).unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(relevance(&b, &c).unwrap(), 0.0);
        assert!((relevance(&a, &b).unwrap() - 0.9239).abs() < 1e-4);
        assert!(matches!(
            relevance(&a, &sv("d", &[1.0, 0.0])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn relevance_matrix_small_cases() {
        let same = ConceptStore::from_vectors([sv("a", &[1.0, 1.0]), sv("b", &[1.0, 1.0])]).unwrap();
        let m = relevance_matrix(&same).unwrap();
        for v in &m.values {
            assert!((v - 1.0).abs() < 1e-6);
        }
        let orth = ConceptStore::from_vectors([sv("a", &[1.0, 0.0]), sv("b", &[0.0, 1.0])]).unwrap();
        assert_eq!(relevance_matrix(&orth).unwrap().values, vec![1.0, 0.0, 0.0, 1.0]);
        let one = ConceptStore::from_vectors([sv("a", &[1.0, 0.0])]).unwrap();
        assert!(matches!(relevance_matrix(&one), Err(Error::Store(_))));
    }

    #[test]
    fn relevance_matrix_matches_pairwise() {
        let store = ConceptStore::from_vectors([
            sv("p", &[0.2, 0.9, 0.4, 0.1]),
            sv("q", &[0.7, 0.1, 0.0, 0.5]),
            sv("r", &[0.3, 0.3, 0.8, 0.6]),
        ])
        .unwrap();
        let m = relevance_matrix(&store).unwrap();
        let vs: Vec<_> = store.iter().collect();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 1.0 } else { relevance(vs[i], vs[j]).unwrap() };
                assert!((m.get(i, j) - expected).abs() < 1e-6);
                assert_eq!(m.get(i, j), m.get(j, i));
            }
        }
    }

    #[test]
    fn explain_cases() {
        let texture = ConceptStore::from_vectors([
            sv("cracked", &[1.0, 0.0, 0.0, 0.0]),
            sv("striped", &[0.0, 1.0, 0.0, 0.0]),
        ])
        .unwrap();
        let material = ConceptStore::from_vectors([
            sv("stone", &[0.8, 0.0, 0.6, 0.0]),
            sv("wood", &[0.0, 0.6, 0.8, 0.0]),
        ])
        .unwrap();
        let out = explain_with_concepts(&[1.0, 0.0, 0.0, 0.0], &[("texture", &texture)], 0.3).unwrap();
        assert_eq!(
            out[0].verdict,
            Verdict::Concept {
                name: "cracked".into(),
                score: 1.0
            }
        );
        let out = explain_with_concepts(&[0.0, 0.0, 0.0, 1.0], &[("texture", &texture)], 0.3).unwrap();
        assert!(matches!(out[0].verdict, Verdict::Abstain { .. }));

        // brute force over every concept in each store
        let f = [0.5f32, 0.2, 0.9, 0.1];
        let out = explain_with_concepts(&f, &[("texture", &texture), ("material", &material)], 0.3).unwrap();
        for (expl, store) in out.iter().zip([&texture, &material]) {
            let mut best = ("", f32::MIN);
            for v in store.iter() {
                let c = crate::sevec::cosine_sim(&f, &v.direction).unwrap();
                if c > best.1 {
                    best = (&v.concept, c);
                }
            }
            match &expl.verdict {
                Verdict::Concept { name, .. } | Verdict::Abstain { best: name, .. } => assert_eq!(name, best.0),
            }
        }
        assert_eq!(out[1].role, "material");
        assert!(explain_with_concepts(&f, &[], 0.3).is_err());
    }

    #[test]
    fn store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = ConceptStore::from_vectors([sv("a b", &[1.0, 2.0]), sv("c", &[0.0, 1.0])]).unwrap();
        let path = store.save(dir.path(), "store").unwrap();
        assert_eq!(ConceptStore::load(path).unwrap(), store);
    }
}
