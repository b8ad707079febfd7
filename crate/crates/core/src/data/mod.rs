//! Images, annotations, masks, probability maps and dataset manifests.

mod annotation;
mod image;
mod manifest;
mod mask;

pub use self::annotation::{
    load_annotations, parse_annotations, parse_icdar_annotations, serialize_annotations, AnnotationFormat,
    QuadAnnotation, DONT_CARE,
};
pub use self::image::{load_image, save_image, Image};
pub use self::manifest::{DatasetManifest, ManifestAnnotationFormat, ManifestEntry, Provenance};
pub use self::mask::{feather_mask, load_probmap, rasterize_mask, save_probmap, TextMask, TextProbMap};
