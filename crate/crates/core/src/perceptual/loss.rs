use serde::{Deserialize, Serialize};

use super::extractor::{FeatureExtractor, FeatureStack, LayerSelection};
use crate::autograd::{Graph, Reduction, Var};
use crate::data::Image;
use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Channel-by-channel correlation of one activation map.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix(Tensor);

impl GramMatrix {
    pub fn size(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.data()[i * self.size() + j]
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        if t.shape().len() != 2 || t.shape()[0] != t.shape()[1] {
            return Err(Error::Contract(format!("Gram matrix must be square, got {:?}", t.shape())));
        }
        Ok(GramMatrix(t))
    }
}

pub(crate) fn gram_divisor(feature: &Tensor, normalize: bool) -> f64 {
    if normalize {
        feature.len() as f64
    } else {
        1.0
    }
}

/// `F·Fᵀ` over the C×(H·W) reshape, divided by C·H·W when `normalize` is set.
pub fn gram(feature: &Tensor, normalize: bool) -> Result<GramMatrix> {
    if feature.shape().len() != 3 || feature.is_empty() {
        return Err(Error::Contract(format!(
            "gram needs a non-empty C×H×W map, got {:?}",
            feature.shape()
        )));
    }
    if !feature.is_finite() {
        return Err(Error::Numeric("gram input contains non-finite values".into()));
    }
    Ok(GramMatrix(tensor::gram(feature, gram_divisor(feature, normalize))))
}

fn reduced_sq_diff(a: &Tensor, b: &Tensor, reduction: Reduction, what: &str) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Contract(format!(
            "{what} shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / reduction.divisor(a.len()))
}

/// Squared feature difference on the content layer.
pub fn content_loss(
    content: &FeatureStack,
    stylized: &FeatureStack,
    layers: &LayerSelection,
    reduction: Reduction,
) -> Result<f64> {
    let m = layers.content;
    let (Some(fc), Some(fp)) = (content.get(m), stylized.get(m)) else {
        return Err(Error::Contract(format!("both feature stacks must contain content layer {m}")));
    };
    reduced_sq_diff(fc, fp, reduction, "content feature")
}

/// Sum over layers of the reduced squared Gram difference.
pub fn style_loss(grams_s: &[GramMatrix], grams_p: &[GramMatrix], reduction: Reduction) -> Result<f64> {
    if grams_s.len() != grams_p.len() {
        return Err(Error::Contract(format!(
            "{} style Gram matrices vs {} stylized",
            grams_s.len(),
            grams_p.len()
        )));
    }
    grams_s
        .iter()
        .zip(grams_p)
        .map(|(s, p)| reduced_sq_diff(&s.0, &p.0, reduction, "Gram matrix"))
        .sum()
}

/// Content and style weights of the perceptual objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub content: f64,
    pub style: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            content: 1.0,
            style: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub content: f64,
    pub style: f64,
    pub total: f64,
    pub weights: LossWeights,
}

impl LossBreakdown {
    fn compose(content: f64, style: f64, weights: LossWeights) -> Self {
        LossBreakdown {
            content,
            style,
            total: weights.content * content + weights.style * style,
            weights,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossOptions {
    pub reduction: Reduction,
    pub normalize_gram: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions {
            reduction: Reduction::Mean,
            normalize_gram: true,
        }
    }
}

/// The content + style objective bound to one extractor and layer choice.
#[derive(Debug, Clone)]
pub struct PerceptualLoss<'a> {
    pub extractor: &'a FeatureExtractor,
    pub layers: LayerSelection,
    pub weights: LossWeights,
    pub options: LossOptions,
}

/// Graph handles for one evaluation of [`PerceptualLoss`].
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub content: Var,
    pub style: Var,
    pub total: Var,
}

impl<'a> PerceptualLoss<'a> {
    pub fn new(extractor: &'a FeatureExtractor, layers: LayerSelection, weights: LossWeights) -> Result<Self> {
        layers.validate(extractor.stages())?;
        Ok(PerceptualLoss {
            extractor,
            layers,
            weights,
            options: LossOptions::default(),
        })
    }

    pub fn with_options(mut self, options: LossOptions) -> Self {
        self.options = options;
        self
    }

    /// Gram matrices of a style image on every style layer, in layer order.
    pub fn style_grams(&self, style: &Image) -> Result<Vec<GramMatrix>> {
        let stack = self.extractor.extract_features(style, &self.layers)?;
        self.layers
            .style
            .iter()
            .map(|&n| gram(stack.get(n).expect("requested layer"), self.options.normalize_gram))
            .collect()
    }

    /// Content-layer features of a content image.
    pub fn content_features(&self, content: &Image) -> Result<Tensor> {
        self.content_features_tensor(&content.to_tensor())
    }

    pub(crate) fn content_features_tensor(&self, content: &Tensor) -> Result<Tensor> {
        let sel = LayerSelection {
            content: self.layers.content,
            style: vec![self.layers.content],
        };
        let stack = self.extractor.extract_tensor(content, &sel)?;
        Ok(stack.get(self.layers.content).expect("content layer").clone())
    }

    fn check_grams(&self, s_grams: &[GramMatrix]) -> Result<()> {
        if s_grams.len() != self.layers.style.len() {
            return Err(Error::Contract(format!(
                "{} style Gram matrices for {} style layers",
                s_grams.len(),
                self.layers.style.len()
            )));
        }
        Ok(())
    }

    /// Records the objective on `g` for a stylized image node `p` (3×H×W).
    pub fn record(
        &self,
        g: &mut Graph,
        p: Var,
        content_features: &Tensor,
        s_grams: &[GramMatrix],
    ) -> Result<LossVars> {
        self.check_grams(s_grams)?;
        let (_, h, w) = g.value(p).dims3();
        self.extractor.check_size(h, w, self.layers.deepest())?;
        let outs = self.extractor.forward_graph(g, p, self.layers.deepest());
        let fp = outs[self.layers.content];
        if g.value(fp).shape() != content_features.shape() {
            return Err(Error::Contract(format!(
                "content features {:?} vs stylized features {:?}",
                content_features.shape(),
                g.value(fp).shape()
            )));
        }
        let content = g.squared_error(fp, content_features, self.options.reduction);
        let mut style_terms = Vec::with_capacity(s_grams.len());
        for (&n, target) in self.layers.style.iter().zip(s_grams) {
            let f = outs[n];
            if target.size() != g.value(f).shape()[0] {
                return Err(Error::Contract(format!(
                    "style Gram for layer {n} is {0}×{0}, layer has {1} channels",
                    target.size(),
                    g.value(f).shape()[0]
                )));
            }
            let gp = g.gram(f, gram_divisor(g.value(f), self.options.normalize_gram));
            style_terms.push((g.squared_error(gp, &target.0, self.options.reduction), 1.0));
        }
        let style = g.weighted_sum(&style_terms);
        let total = g.weighted_sum(&[(content, self.weights.content), (style, self.weights.style)]);
        Ok(LossVars { content, style, total })
    }

    /// Loss value for a stylized image.
    pub fn evaluate(&self, content: &Image, s_grams: &[GramMatrix], p: &Image) -> Result<LossBreakdown> {
        let fc = self.content_features(content)?;
        self.evaluate_tensor(&fc, s_grams, &p.to_tensor(), false).map(|(b, _)| b)
    }

    /// Loss and, when asked, its gradient with respect to every value of `p`.
    pub fn evaluate_tensor(
        &self,
        content_features: &Tensor,
        s_grams: &[GramMatrix],
        p: &Tensor,
        want_grad: bool,
    ) -> Result<(LossBreakdown, Option<Tensor>)> {
        let mut g = Graph::new();
        let pv = if want_grad {
            g.param(p.clone())
        } else {
            g.constant(p.clone())
        };
        let vars = self.record(&mut g, pv, content_features, s_grams)?;
        let breakdown = LossBreakdown::compose(
            g.value(vars.content).item(),
            g.value(vars.style).item(),
            self.weights,
        );
        let grad = want_grad.then(|| {
            g.backward(vars.total)
                .take(pv)
                .unwrap_or_else(|| Tensor::zeros(p.shape()))
        });
        Ok((breakdown, grad))
    }
}

/// Perceptual loss of a stylized image `p` for content `c` and cached style
/// Grams, with default reduction (mean) and Gram normalization.
pub fn total_loss(
    c: &Image,
    s_grams: &[GramMatrix],
    p: &Image,
    extractor: &FeatureExtractor,
    layers: &LayerSelection,
    weights: LossWeights,
) -> Result<LossBreakdown> {
    PerceptualLoss::new(extractor, layers.clone(), weights)?.evaluate(c, s_grams, p)
}
