use std::path::PathBuf;

use image::imageops::{self, FilterType};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::data::{load_image, DatasetManifest, Image};
use crate::distill::average;
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::perceptual::{
    ExtractorConfig, FeatureExtractor, GramMatrix, LayerSelection, LossOptions, LossWeights, PerceptualLoss,
};
use crate::style_net::{Conditioning, NetworkConfig, StyleNetwork, StyleWeights};
use crate::tensor::Tensor;
use crate::trace::LossTrace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub weights: LossWeights,
    /// Defaults to content from the deepest stage and style from all stages.
    #[serde(default)]
    pub layers: Option<LayerSelection>,
    #[serde(default)]
    pub loss: LossOptions,
    /// One image per style, in style-index order.
    pub style_images: Vec<PathBuf>,
    pub content_manifest: Option<PathBuf>,
    /// Side of the square content crop.
    pub crop: usize,
    pub seed: u64,
    pub network: NetworkConfig,
    pub extractor: ExtractorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 500,
            batch_size: 1,
            optimizer: AdamConfig::default(),
            weights: LossWeights::default(),
            layers: None,
            loss: LossOptions::default(),
            style_images: Vec::new(),
            content_manifest: None,
            crop: 32,
            seed: 0,
            network: NetworkConfig::default(),
            extractor: ExtractorConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn layer_selection(&self) -> LayerSelection {
        self.layers
            .clone()
            .unwrap_or_else(|| LayerSelection::default_for(self.extractor.stages.len()))
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.extractor.validate()?;
        self.optimizer.validate()?;
        self.layer_selection().validate(self.extractor.stages.len())?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let m = self.network.size_multiple();
        if self.crop == 0 || !self.crop.is_multiple_of(m) {
            return Err(Error::Config(format!(
                "crop {} must be a positive multiple of {m}",
                self.crop
            )));
        }
        Ok(())
    }
}

/// Per-step record of a baseline run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineStep {
    pub step: usize,
    pub style: usize,
    pub content_loss: f64,
    pub style_loss: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub network: StyleNetwork,
    pub steps: Vec<BaselineStep>,
    /// Number of style Gram sets computed; one per style.
    pub gram_computations: usize,
}

impl BaselineOutcome {
    /// Total loss per step; the phase column holds the style index.
    pub fn trace(&self) -> LossTrace {
        let mut t = LossTrace::default();
        for s in &self.steps {
            t.push(s.step, s.style, s.total);
        }
        t
    }

    /// Style-loss sequence of one style, in step order.
    pub fn style_trace(&self, style: usize) -> Vec<f64> {
        self.steps.iter().filter(|s| s.style == style).map(|s| s.style_loss).collect()
    }
}

/// Scales the shorter side to `side`, then crops the centered square.
pub fn resize_and_crop(img: &Image, side: usize) -> Result<Image> {
    let (h, w) = (img.height(), img.width());
    let short = h.min(w);
    let scaled = if short == side {
        img.clone()
    } else {
        let nh = ((h * side) as f64 / short as f64).round().max(side as f64) as u32;
        let nw = ((w * side) as f64 / short as f64).round().max(side as f64) as u32;
        Image::from_rgb32f(&imageops::resize(&img.to_rgb32f(), nw, nh, FilterType::Triangle))?
    };
    let (y0, x0) = ((scaled.height() - side) / 2, (scaled.width() - side) / 2);
    Image::from_fn(side, side, |y, x, c| scaled.get(y0 + y, x0 + x, c))
}

/// Reads the style sources and the content manifest named by `config`.
pub fn train_baseline(config: &TrainConfig) -> Result<BaselineOutcome> {
    config.validate()?;
    if config.style_images.len() != config.network.styles {
        return Err(Error::Config(format!(
            "{} style images for a {}-style network",
            config.style_images.len(),
            config.network.styles
        )));
    }
    let mut styles = Vec::with_capacity(config.style_images.len());
    for p in &config.style_images {
        if !p.is_file() {
            return Err(Error::Config(format!("style source {} does not exist", p.display())));
        }
        styles.push(load_image(p)?);
    }
    let manifest_path = config
        .content_manifest
        .as_ref()
        .ok_or_else(|| Error::Config("no content manifest configured".into()))?;
    let manifest = DatasetManifest::load(manifest_path)?;
    let contents = manifest
        .entries
        .iter()
        .map(|e| resize_and_crop(&load_image(manifest.resolve(&e.image))?, config.crop))
        .collect::<Result<Vec<_>>>()?;
    train_baseline_on(config, &contents, &styles)
}

/// Trains on in-memory content and style images. Contents must already
/// satisfy the network's size rule; steps cycle through styles in order.
pub fn train_baseline_on(config: &TrainConfig, contents: &[Image], styles: &[Image]) -> Result<BaselineOutcome> {
    config.validate()?;
    let n_styles = config.network.styles;
    if styles.len() != n_styles {
        return Err(Error::Config(format!(
            "{} style images for a {n_styles}-style network",
            styles.len()
        )));
    }
    if contents.is_empty() {
        return Err(Error::Config("content dataset is empty".into()));
    }
    let mut network = StyleNetwork::new(config.network.clone())?;
    for c in contents {
        network.check_input(c.height(), c.width())?;
    }
    let extractor = FeatureExtractor::new(config.extractor.clone())?;
    let loss = PerceptualLoss::new(&extractor, config.layer_selection(), config.weights)?.with_options(config.loss);

    let grams: Vec<Vec<GramMatrix>> = styles.iter().map(|s| loss.style_grams(s)).collect::<Result<_>>()?;
    let gram_computations = grams.len();
    let mut outcome = BaselineOutcome {
        network: network.clone(),
        steps: Vec::with_capacity(config.steps),
        gram_computations,
    };
    if config.steps == 0 {
        return Ok(outcome);
    }
    let features: Vec<Tensor> = contents
        .par_iter()
        .map(|c| loss.content_features(c))
        .collect::<Result<_>>()?;
    let one_hots: Vec<StyleWeights> = (0..n_styles)
        .map(|k| StyleWeights::one_hot(n_styles, k))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Adam::new(config.optimizer, &network.params())?;
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    for step in 0..config.steps {
        let style = step % n_styles;
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size {
            if cursor == order.len() {
                order = (0..contents.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let net = &network;
        let results: Vec<((f64, f64), (f64, Vec<Vec<f64>>))> = batch
            .par_iter()
            .map(|&i| {
                let mut g = Graph::new();
                let x = g.constant(contents[i].to_tensor());
                let rec = net.record(&mut g, x, Conditioning::Mix(&one_hots[style]), true)?;
                let vars = loss.record(&mut g, rec.output, &features[i], &grams[style])?;
                let parts = (g.value(vars.content).item(), g.value(vars.style).item());
                let total = g.value(vars.total).item();
                let mut grads = g.backward(vars.total);
                Ok((parts, (total, rec.collect(net, &mut grads))))
            })
            .collect::<Result<_>>()?;
        let n = results.len() as f64;
        let content_loss = results.iter().map(|r| r.0 .0).sum::<f64>() / n;
        let style_loss = results.iter().map(|r| r.0 .1).sum::<f64>() / n;
        let (total, grads) = average(results.into_iter().map(|r| r.1).collect());
        if !total.is_finite() {
            return Err(Error::Diverged { step, loss: total });
        }
        opt.step(network.params_mut(), &grads)?;
        outcome.steps.push(BaselineStep {
            step,
            style,
            content_loss,
            style_loss,
            total,
        });
    }
    outcome.network = network;
    Ok(outcome)
}
