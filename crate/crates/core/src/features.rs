use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::manifest::{read_lines, write_lines, Manifest, ManifestEntry, ManifestKind};
use crate::tensor::{read_tensor, write_tensor, Tensor};

/// An `M x n` matrix of feature representations, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    dim: usize,
    data: Vec<f32>,
    sample_ids: Vec<String>,
    labels: Vec<Option<String>>,
}

impl FeatureSet {
    pub fn new(
        dim: usize,
        data: Vec<f32>,
        sample_ids: Vec<String>,
        labels: Option<Vec<Option<String>>>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Parameter("feature dimension must be at least 1".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::Dimension {
                expected: dim,
                got: data.len() % dim,
            });
        }
        let rows = data.len() / dim;
        if sample_ids.len() != rows {
            return Err(Error::Manifest(format!(
                "{} sample ids for {rows} feature rows",
                sample_ids.len()
            )));
        }
        let labels = labels.unwrap_or_else(|| vec![None; rows]);
        if labels.len() != rows {
            return Err(Error::Manifest(format!(
                "{} labels for {rows} feature rows",
                labels.len()
            )));
        }
        Ok(FeatureSet {
            dim,
            data,
            sample_ids,
            labels,
        })
    }

    /// Builds a set from rows, naming samples `id_0`, `id_1`, ...
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::EmptyInput("no rows".into()))?;
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::Dimension {
                expected: dim,
                got: bad.len(),
            });
        }
        let ids = (0..rows.len()).map(|i| format!("id_{i}")).collect();
        FeatureSet::new(dim, rows.concat(), ids, None)
    }

    pub fn with_labels(mut self, labels: Vec<Option<String>>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::Manifest(format!(
                "{} labels for {} feature rows",
                labels.len(),
                self.len()
            )));
        }
        self.labels = labels;
        Ok(self)
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

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn sample_id(&self, i: usize) -> &str {
        &self.sample_ids[i]
    }

    pub fn label(&self, i: usize) -> Option<&str> {
        self.labels[i].as_deref()
    }

    pub fn labels(&self) -> &[Option<String>] {
        &self.labels
    }

    /// Distinct labels in lexicographic order.
    pub fn distinct_labels(&self) -> Vec<String> {
        self.labels
            .iter()
            .flatten()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Rows carrying `label`, in their original order.
    pub fn select_label(&self, label: &str) -> Result<FeatureSet> {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| self.label(i) == Some(label))
            .collect();
        if idx.is_empty() {
            return Err(Error::Store(format!("no rows labeled '{label}'")));
        }
        Ok(self.subset(&idx))
    }

    pub fn subset(&self, indices: &[usize]) -> FeatureSet {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        FeatureSet {
            dim: self.dim,
            data,
            sample_ids: indices.iter().map(|&i| self.sample_ids[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i].clone()).collect(),
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::from_f32(vec![self.len(), self.dim], self.data.clone())
    }
}

/// Loads a `feature_set` manifest. Each entry contributes an `M_k x n` f32
/// tensor (`path`), a sample-id file (`ids`) and optionally a label file
/// (`labels`, one line per row, an empty line meaning unlabeled). Entries
/// are concatenated in manifest order.
pub fn load_feature_set(manifest_path: impl AsRef<Path>) -> Result<FeatureSet> {
    let manifest = Manifest::load(manifest_path)?;
    manifest.expect_kind(ManifestKind::FeatureSet)?;
    if manifest.entries.is_empty() {
        return Err(Error::Manifest("feature_set manifest has no entries".into()));
    }

    let mut dim = None;
    let mut data = Vec::new();
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for entry in &manifest.entries {
        let tensor = read_tensor(manifest.entry_path(entry)?)?;
        let (rows, n) = match *tensor.shape() {
            [n] => (1, n),
            [rows, n] => (rows, n),
            ref other => {
                return Err(Error::Manifest(format!(
                    "entry '{}': feature tensor must be rank 1 or 2, found shape {other:?}",
                    entry.name
                )))
            }
        };
        match dim {
            None => dim = Some(n),
            Some(d) if d != n => {
                return Err(Error::Manifest(format!(
                    "entry '{}': feature width {n} differs from {d}",
                    entry.name
                )))
            }
            _ => {}
        }
        let entry_ids = read_lines(manifest.resolve(entry.require("ids")?))?;
        if entry_ids.len() != rows {
            return Err(Error::Manifest(format!(
                "entry '{}': {} ids for {rows} rows",
                entry.name,
                entry_ids.len()
            )));
        }
        let entry_labels = match entry.get("labels") {
            Some(p) => {
                let lines = read_lines(manifest.resolve(p))?;
                if lines.len() != rows {
                    return Err(Error::Manifest(format!(
                        "entry '{}': {} labels for {rows} rows",
                        entry.name,
                        lines.len()
                    )));
                }
                lines
                    .into_iter()
                    .map(|l| (!l.is_empty()).then_some(l))
                    .collect()
            }
            None => vec![None; rows],
        };
        data.extend(tensor.into_f32().map_err(|_| {
            Error::Manifest(format!("entry '{}': features must be f32", entry.name))
        })?);
        ids.extend(entry_ids);
        labels.extend(entry_labels);
    }
    FeatureSet::new(dim.expect("at least one entry"), data, ids, Some(labels))
}

/// Writes `fs` as a single-entry feature_set manifest in `dir`, returning
/// the manifest path.
pub fn save_feature_set(fs_: &FeatureSet, dir: impl AsRef<Path>, name: &str) -> Result<std::path::PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tensor_file = format!("{name}.stf");
    let ids_file = format!("{name}.ids");
    write_tensor(&fs_.to_tensor()?, dir.join(&tensor_file))?;
    write_lines(dir.join(&ids_file), fs_.sample_ids())?;

    let mut entry = ManifestEntry::new(name)
        .with_path(tensor_file)
        .with("ids", &ids_file);
    if fs_.labels().iter().any(Option::is_some) {
        let labels_file = format!("{name}.labels");
        let lines: Vec<&str> = fs_
            .labels()
            .iter()
            .map(|l| l.as_deref().unwrap_or(""))
            .collect();
        write_lines(dir.join(&labels_file), &lines)?;
        entry = entry.with("labels", labels_file);
    }
    let mut manifest = Manifest::new(ManifestKind::FeatureSet);
    manifest.push(entry)?;
    let path = dir.join(format!("{name}.manifest"));
    manifest.save(&path)?;
    Ok(path)
}
