//! Two-stage selective stylization: stylize the whole image, then blend it
//! with the original through a per-pixel text probability map.

use std::path::Path;

use crate::data::{feather_mask, load_probmap, rasterize_mask, Image, QuadAnnotation, TextProbMap};
use crate::error::{Error, Result};
use crate::style_net::{StyleNetwork, StyleWeights};

/// `P ⊙ p + (1 − P) ⊙ c`, with the single-channel `P` broadcast over RGB.
pub fn blend(c: &Image, p: &Image, pt: &TextProbMap) -> Result<Image> {
    let (h, w) = (c.height(), c.width());
    if (p.height(), p.width()) != (h, w) || (pt.height(), pt.width()) != (h, w) {
        return Err(Error::Contract(format!(
            "blend inputs differ in size: content {h}×{w}, stylized {}×{}, probability map {}×{}",
            p.height(),
            p.width(),
            pt.height(),
            pt.width()
        )));
    }
    let data = c
        .data()
        .chunks_exact(3)
        .zip(p.data().chunks_exact(3))
        .zip(pt.data())
        .flat_map(|((cp, pp), &a)| (0..3).map(move |k| a * pp[k] + (1.0 - a) * cp[k]))
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    Image::new(h, w, data)
}

/// Everything a provider may consult to produce a probability map.
#[derive(Debug, Clone, Copy)]
pub struct ProbMapQuery<'a> {
    pub image: &'a Image,
    pub annotations: Option<&'a [QuadAnnotation]>,
    pub heatmap: Option<&'a Path>,
}

impl<'a> ProbMapQuery<'a> {
    pub fn new(image: &'a Image) -> Self {
        ProbMapQuery {
            image,
            annotations: None,
            heatmap: None,
        }
    }

    pub fn with_annotations(mut self, annotations: &'a [QuadAnnotation]) -> Self {
        self.annotations = Some(annotations);
        self
    }

    pub fn with_heatmap(mut self, heatmap: &'a Path) -> Self {
        self.heatmap = Some(heatmap);
        self
    }
}

/// Source of the text probability map.
#[derive(Debug, Clone, PartialEq)]
pub enum ProbMapProvider {
    /// Externally computed heatmap read from the query's heatmap path.
    File,
    /// Rasterized annotations feathered by `radius` pixels.
    Feathered { radius: f64 },
    Constant(f64),
}

impl ProbMapProvider {
    pub fn probmap(&self, q: &ProbMapQuery<'_>) -> Result<TextProbMap> {
        let (h, w) = (q.image.height(), q.image.width());
        let map = match self {
            ProbMapProvider::File => {
                let path = q
                    .heatmap
                    .ok_or_else(|| Error::Config("file-backed provider needs a heatmap path".into()))?;
                load_probmap(path)?
            }
            ProbMapProvider::Feathered { radius } => {
                let annots = q
                    .annotations
                    .ok_or_else(|| Error::Config("feathered provider needs annotations".into()))?;
                feather_mask(&rasterize_mask(annots, h, w)?, *radius)?
            }
            ProbMapProvider::Constant(v) => TextProbMap::constant(h, w, *v)?,
        };
        if (map.height(), map.width()) != (h, w) {
            return Err(Error::Contract(format!(
                "probability map is {}×{} but the image is {h}×{w}",
                map.height(),
                map.width()
            )));
        }
        Ok(map)
    }
}

/// `blend(c, forward(net, c, w), provider(c))`. Inputs of any size are
/// accepted; see [`StyleNetwork::forward_padded`].
pub fn stylize_selective(
    net: &StyleNetwork,
    provider: &ProbMapProvider,
    query: &ProbMapQuery<'_>,
    w: &StyleWeights,
) -> Result<Image> {
    let pt = provider.probmap(query)?;
    let stylized = net.forward_padded(query.image, w)?;
    blend(query.image, &stylized, &pt)
}
