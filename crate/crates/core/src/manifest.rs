//! Line-oriented manifests that tie STF1 tensors together.
//!
//! ```text
//! format_version = 1
//! kind = feature_set
//! # header attributes, then one section per entry
//! [train]
//! path = train.stf
//! ids = train.ids
//! ```
//!
//! The first line is always `format_version = N`. Keys before the first
//! `[section]` are manifest attributes; each section is an entry whose
//! optional `path` key names its tensor file and whose other keys are
//! free-form metadata. Relative paths resolve against the manifest's own
//! directory. Blank lines and lines starting with `#` are ignored.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManifestKind {
    FeatureSet,
    Network,
    ConceptStore,
}

impl ManifestKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ManifestKind::FeatureSet => "feature_set",
            ManifestKind::Network => "network",
            ManifestKind::ConceptStore => "concept_store",
        }
    }
}

impl FromStr for ManifestKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feature_set" => Ok(ManifestKind::FeatureSet),
            "network" => Ok(ManifestKind::Network),
            "concept_store" => Ok(ManifestKind::ConceptStore),
            other => Err(Error::Manifest(format!("unknown manifest kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub path: Option<String>,
    pub metadata: BTreeMap<String, String>,
}

impl ManifestEntry {
    pub fn new(name: impl Into<String>) -> Self {
        ManifestEntry {
            name: name.into(),
            path: None,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_path(mut self, path: impl Into<String>) -> Self {
        self.path = Some(path.into());
        self
    }

    pub fn with(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.metadata.insert(key.into(), value.to_string());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| {
            Error::Manifest(format!("entry '{}' is missing key '{key}'", self.name))
        })
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| {
                Error::Manifest(format!(
                    "entry '{}': cannot parse '{key}' value '{v}'",
                    self.name
                ))
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub format_version: u32,
    pub kind: ManifestKind,
    pub attributes: BTreeMap<String, String>,
    pub entries: Vec<ManifestEntry>,
    base_dir: PathBuf,
}

impl Manifest {
    pub fn new(kind: ManifestKind) -> Self {
        Manifest {
            format_version: FORMAT_VERSION,
            kind,
            attributes: BTreeMap::new(),
            entries: Vec::new(),
            base_dir: PathBuf::new(),
        }
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn attribute(&self, key: &str) -> Option<&str> {
        self.attributes.get(key).map(String::as_str)
    }

    pub fn set_attribute(&mut self, key: impl Into<String>, value: impl ToString) {
        self.attributes.insert(key.into(), value.to_string());
    }

    pub fn push(&mut self, entry: ManifestEntry) -> Result<()> {
        validate_name(&entry.name)?;
        if self.entries.iter().any(|e| e.name == entry.name) {
            return Err(Error::Manifest(format!("duplicate entry name '{}'", entry.name)));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn expect_kind(&self, kind: ManifestKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Manifest(format!(
                "expected a {} manifest, found {}",
                kind.as_str(),
                self.kind.as_str()
            )));
        }
        Ok(())
    }

    /// Resolves a manifest-relative path.
    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn entry_path(&self, entry: &ManifestEntry) -> Result<PathBuf> {
        entry
            .path
            .as_deref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| Error::Manifest(format!("entry '{}' has no tensor path", entry.name)))
    }

    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, first) = lines
            .next()
            .ok_or_else(|| Error::Manifest("empty manifest".into()))?;
        let (key, value) = split_kv(first, 1)?;
        if key != "format_version" {
            return Err(Error::Manifest("first line must be 'format_version = N'".into()));
        }
        let format_version: u32 = value
            .parse()
            .map_err(|_| Error::Manifest(format!("bad format_version '{value}'")))?;
        if format_version != FORMAT_VERSION {
            return Err(Error::Manifest(format!(
                "unsupported format_version {format_version}"
            )));
        }

        let mut attributes = BTreeMap::new();
        let mut entries: Vec<ManifestEntry> = Vec::new();
        let mut seen = HashSet::new();
        for (idx, raw) in lines {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| {
                    Error::Manifest(format!("line {line_no}: unterminated section header"))
                })?;
                validate_name(name)?;
                if !seen.insert(name.to_string()) {
                    return Err(Error::Manifest(format!("duplicate entry name '{name}'")));
                }
                entries.push(ManifestEntry::new(name));
                continue;
            }
            let (key, value) = split_kv(line, line_no)?;
            let target = match entries.last_mut() {
                None => &mut attributes,
                Some(entry) if key == "path" => {
                    entry.path = Some(value.to_string());
                    continue;
                }
                Some(entry) => &mut entry.metadata,
            };
            if target.insert(key.to_string(), value.to_string()).is_some() {
                return Err(Error::Manifest(format!("line {line_no}: duplicate key '{key}'")));
            }
        }

        let kind = attributes
            .remove("kind")
            .ok_or_else(|| Error::Manifest("missing 'kind' attribute".into()))?
            .parse()?;
        Ok(Manifest {
            format_version,
            kind,
            attributes,
            entries,
            base_dir: base_dir.into(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Manifest::parse(&text, base)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "format_version = {}", self.format_version);
        let _ = writeln!(out, "kind = {}", self.kind.as_str());
        for (k, v) in &self.attributes {
            let _ = writeln!(out, "{k} = {v}");
        }
        for entry in &self.entries {
            let _ = writeln!(out, "\n[{}]", entry.name);
            if let Some(p) = &entry.path {
                let _ = writeln!(out, "path = {p}");
            }
            for (k, v) in &entry.metadata {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn split_kv(line: &str, line_no: usize) -> Result<(&str, &str)> {
    let (k, v) = line
        .split_once('=')
        .ok_or_else(|| Error::Manifest(format!("line {line_no}: expected 'key = value'")))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(Error::Manifest(format!("line {line_no}: empty key")));
    }
    Ok((k, v.trim()))
}

/// Entry names appear as section headers, so they cannot contain brackets,
/// line breaks, or surrounding whitespace.
pub fn validate_name(name: &str) -> Result<()> {
    if name.is_empty()
        || name.trim() != name
        || name.contains(['[', ']', '\n', '\r', '='])
        || name.starts_with('#')
    {
        return Err(Error::Manifest(format!("invalid entry name '{name}'")));
    }
    Ok(())
}

/// Reads a newline-delimited text file, one item per line.
pub fn read_lines(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

pub fn write_lines<S: AsRef<str>>(path: impl AsRef<Path>, items: &[S]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for item in items {
        text.push_str(item.as_ref());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
