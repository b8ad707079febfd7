//! JSON dataset manifests.
//!
//! ```json
//! {
//!   "root": "images",
//!   "annotation_format": "quad",
//!   "entries": [
//!     { "image": "img_1.png", "annotations": "gt_img_1.txt", "probmap": "heat_1.png" }
//!   ]
//! }
//! ```
//!
//! `root` is optional and resolved against the manifest's own directory;
//! entry paths are resolved against `root`. Entries produced by augmentation
//! additionally carry a `provenance` object.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::annotation::{load_annotations, AnnotationFormat, QuadAnnotation};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifestAnnotationFormat {
    #[default]
    Quad,
    Box,
}

impl From<ManifestAnnotationFormat> for AnnotationFormat {
    fn from(f: ManifestAnnotationFormat) -> Self {
        match f {
            ManifestAnnotationFormat::Quad => AnnotationFormat::Quad,
            ManifestAnnotationFormat::Box => AnnotationFormat::Box,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: PathBuf,
    pub style_indices: Vec<usize>,
    pub mode: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub annotations: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probmap: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
    #[serde(default)]
    pub annotation_format: ManifestAnnotationFormat,
    pub entries: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
    /// Directory the manifest was loaded from.
    #[serde(skip)]
    base: PathBuf,
}

impl DatasetManifest {
    pub fn new(base: impl Into<PathBuf>, entries: Vec<ManifestEntry>) -> Self {
        DatasetManifest {
            root: None,
            annotation_format: ManifestAnnotationFormat::Quad,
            entries,
            metadata: None,
            base: base.into(),
        }
    }

    /// Parses and validates: entries unique by image path, every path present.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        m.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(&e.image) {
                return Err(Error::Config(format!("duplicate manifest entry {}", e.image.display())));
            }
            let mut paths = vec![&e.image, &e.annotations];
            paths.extend(e.probmap.as_ref());
            for p in paths {
                let full = self.resolve(p);
                if !full.is_file() {
                    return Err(Error::io(
                        full,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "listed in manifest but missing"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn root_dir(&self) -> PathBuf {
        match &self.root {
            Some(r) => self.base.join(r),
            None => self.base.clone(),
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.root_dir().join(p)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load_annotations(&self, entry: &ManifestEntry) -> Result<Vec<QuadAnnotation>> {
        load_annotations(self.resolve(&entry.annotations), self.annotation_format.into())
    }
}
