//! Fixed feature extractor and the content / style / total losses.

mod extractor;
mod loss;

pub use self::extractor::{ExtractorConfig, FeatureExtractor, FeatureStack, LayerSelection, StageSpec};
pub use self::loss::{
    content_loss, gram, style_loss, total_loss, GramMatrix, LossBreakdown, LossOptions, LossVars, LossWeights,
    PerceptualLoss,
};
