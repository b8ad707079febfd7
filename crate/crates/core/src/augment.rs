//! Annotation-preserving dataset augmentation: every image is emitted with
//! `styles_per_image` stylized variants that share its annotation file.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{load_image, save_image, DatasetManifest, ManifestEntry, Provenance};
use crate::error::{Error, Result};
use crate::selective::{stylize_selective, ProbMapProvider, ProbMapQuery};
use crate::style_net::{StyleNetwork, StyleWeights};

pub const MANIFEST_NAME: &str = "manifest.json";
pub const IMAGE_DIR: &str = "images";
pub const ANNOTATION_DIR: &str = "annotations";

#[derive(Debug, Clone, PartialEq)]
pub enum AugmentMode {
    /// Teacher network plus probability-map blending.
    TwoStage { provider: ProbMapProvider },
    /// A distilled student applied directly.
    EndToEnd,
}

impl AugmentMode {
    pub fn name(&self) -> &'static str {
        match self {
            AugmentMode::TwoStage { .. } => "two-stage",
            AugmentMode::EndToEnd => "end-to-end",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StyleSelection {
    /// Per image, `styles_per_image` distinct styles drawn with the seed.
    Random,
    /// The same listed styles for every image.
    Explicit(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentSpec {
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    pub styles_per_image: usize,
    pub mode: AugmentMode,
    pub selection: StyleSelection,
    pub seed: u64,
    /// Omit the originals from the output.
    pub variants_only: bool,
}

impl AugmentSpec {
    pub fn validate(&self, styles: usize) -> Result<()> {
        if self.styles_per_image > styles {
            return Err(Error::Config(format!(
                "{} styles per image requested from a {styles}-style network",
                self.styles_per_image
            )));
        }
        if let StyleSelection::Explicit(list) = &self.selection {
            if list.len() != self.styles_per_image {
                return Err(Error::Config(format!(
                    "{} explicit styles listed but styles_per_image is {}",
                    list.len(),
                    self.styles_per_image
                )));
            }
            if let Some(k) = list.iter().find(|&&k| k >= styles) {
                return Err(Error::Config(format!("style index {k} out of range for {styles} styles")));
            }
            if list.iter().collect::<HashSet<_>>().len() != list.len() {
                return Err(Error::Config(format!("explicit style list {list:?} repeats a style")));
            }
        }
        Ok(())
    }
}

fn file_name(p: &Path) -> Result<&str> {
    p.file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Config(format!("{} has no usable file name", p.display())))
}

fn stem(p: &Path) -> Result<&str> {
    p.file_stem()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Config(format!("{} has no usable file name", p.display())))
}

fn variant_name(p: &Path, k: usize, ext: Option<&str>) -> Result<String> {
    let ext = ext.or_else(|| p.extension().and_then(|e| e.to_str()));
    Ok(match ext {
        Some(e) => format!("{}_s{k}.{e}", stem(p)?),
        None => format!("{}_s{k}", stem(p)?),
    })
}

fn copy(from: &Path, to: &Path) -> Result<()> {
    std::fs::copy(from, to).map(|_| ()).map_err(|e| Error::io(from, e))
}

struct Job<'a> {
    entry: &'a ManifestEntry,
    styles: Vec<usize>,
}

/// Writes the augmented dataset under `spec.out_dir` and returns its manifest,
/// also saved as `manifest.json` there.
pub fn augment(net: &StyleNetwork, spec: &AugmentSpec) -> Result<DatasetManifest> {
    let n = net.styles();
    spec.validate(n)?;
    let input = DatasetManifest::load(&spec.manifest)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let jobs: Vec<Job> = input
        .entries
        .iter()
        .map(|entry| {
            let styles = match &spec.selection {
                StyleSelection::Random => rand::seq::index::sample(&mut rng, n, spec.styles_per_image).into_vec(),
                StyleSelection::Explicit(list) => list.clone(),
            };
            Job { entry, styles }
        })
        .collect();

    let mut names = HashSet::new();
    for job in &jobs {
        let mut planned = vec![file_name(&job.entry.image)?.to_string()];
        for &k in &job.styles {
            planned.push(variant_name(&job.entry.image, k, Some("png"))?);
        }
        for name in planned {
            if !names.insert(name.clone()) {
                return Err(Error::Config(format!("two outputs would both be named {name}")));
            }
        }
    }

    let image_dir = spec.out_dir.join(IMAGE_DIR);
    let annot_dir = spec.out_dir.join(ANNOTATION_DIR);
    for d in [&image_dir, &annot_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }

    let mode = spec.mode.name();
    let groups: Vec<Vec<ManifestEntry>> = jobs
        .par_iter()
        .map(|job| -> Result<Vec<ManifestEntry>> {
            let entry = job.entry;
            let src_image = input.resolve(&entry.image);
            let src_annot = input.resolve(&entry.annotations);
            let mut out = Vec::with_capacity(job.styles.len() + 1);
            if !spec.variants_only {
                let img_name = file_name(&entry.image)?;
                let ann_name = file_name(&entry.annotations)?;
                copy(&src_image, &image_dir.join(img_name))?;
                copy(&src_annot, &annot_dir.join(ann_name))?;
                out.push(ManifestEntry {
                    image: Path::new(IMAGE_DIR).join(img_name),
                    annotations: Path::new(ANNOTATION_DIR).join(ann_name),
                    probmap: None,
                    provenance: Some(Provenance {
                        source: entry.image.clone(),
                        style_indices: Vec::new(),
                        mode: "original".into(),
                        seed: spec.seed,
                    }),
                });
            }
            if job.styles.is_empty() {
                return Ok(out);
            }
            let content = load_image(&src_image)?;
            let annotations = input.load_annotations(entry)?;
            let heatmap = entry.probmap.as_ref().map(|p| input.resolve(p));
            for &k in &job.styles {
                let w = StyleWeights::one_hot(n, k)?;
                let stylized = match &spec.mode {
                    AugmentMode::TwoStage { provider } => {
                        let mut q = ProbMapQuery::new(&content).with_annotations(&annotations);
                        if let Some(h) = &heatmap {
                            q = q.with_heatmap(h);
                        }
                        stylize_selective(net, provider, &q, &w)?
                    }
                    AugmentMode::EndToEnd => net.forward_padded(&content, &w)?,
                };
                let img_name = variant_name(&entry.image, k, Some("png"))?;
                let ann_name = variant_name(&entry.annotations, k, None)?;
                save_image(&stylized, image_dir.join(&img_name))?;
                copy(&src_annot, &annot_dir.join(&ann_name))?;
                out.push(ManifestEntry {
                    image: Path::new(IMAGE_DIR).join(img_name),
                    annotations: Path::new(ANNOTATION_DIR).join(ann_name),
                    probmap: None,
                    provenance: Some(Provenance {
                        source: entry.image.clone(),
                        style_indices: vec![k],
                        mode: mode.into(),
                        seed: spec.seed,
                    }),
                });
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut manifest = DatasetManifest::new(&spec.out_dir, groups.into_iter().flatten().collect());
    manifest.annotation_format = input.annotation_format;
    manifest.metadata = Some(serde_json::json!({
        "source_manifest": spec.manifest,
        "mode": mode,
        "seed": spec.seed,
        "styles_per_image": spec.styles_per_image,
        "variants_only": spec.variants_only,
        "network_styles": n,
        "network_fingerprint": net.fingerprint(),
    }));
    manifest.save(spec.out_dir.join(MANIFEST_NAME))?;
    Ok(manifest)
}
