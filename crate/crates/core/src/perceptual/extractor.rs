use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Activation, Graph, Var};
use crate::data::Image;
use crate::error::{Error, Result};
use crate::tensor::{conv_out_len, Tensor};

/// One convolution + nonlinearity stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl StageSpec {
    pub const fn new(channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        StageSpec {
            channels,
            kernel,
            stride,
            padding,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub stages: Vec<StageSpec>,
    pub activation: Activation,
    pub seed: u64,
    /// Standard deviation of the random biases; zero gives zero biases.
    #[serde(default)]
    pub bias_std: f64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            stages: vec![StageSpec::new(8, 3, 1, 1), StageSpec::new(16, 3, 2, 0), StageSpec::new(32, 3, 2, 0)],
            activation: Activation::Relu,
            seed: 0,
            bias_std: 0.0,
        }
    }
}

impl ExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("feature extractor needs at least one stage".into()));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.channels == 0 || s.kernel == 0 || s.stride == 0 {
                return Err(Error::Config(format!("extractor stage {i} has a zero dimension: {s:?}")));
            }
        }
        if !(self.bias_std >= 0.0 && self.bias_std.is_finite()) {
            return Err(Error::Config(format!("bias_std must be finite and ≥ 0, got {}", self.bias_std)));
        }
        Ok(())
    }
}

/// Content layer `m` and style layers `n`, every `n ≤ m`. Layer ids are
/// zero-based stage indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSelection {
    pub content: usize,
    pub style: Vec<usize>,
}

impl LayerSelection {
    /// Content from the deepest stage, style from all stages.
    pub fn default_for(stages: usize) -> Self {
        LayerSelection {
            content: stages.saturating_sub(1),
            style: (0..stages).collect(),
        }
    }

    pub fn validate(&self, stages: usize) -> Result<()> {
        if self.style.is_empty() {
            return Err(Error::Config("at least one style layer is required".into()));
        }
        if self.content >= stages {
            return Err(Error::Config(format!(
                "content layer {} does not exist (extractor has {stages} stages)",
                self.content
            )));
        }
        if let Some(n) = self.style.iter().find(|&&n| n > self.content) {
            return Err(Error::Config(format!(
                "style layer {n} is deeper than content layer {}",
                self.content
            )));
        }
        Ok(())
    }

    /// Every requested layer, ascending and deduplicated.
    pub fn all(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.style.iter().copied().chain([self.content]).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn deepest(&self) -> usize {
        self.all().last().copied().unwrap_or(self.content)
    }
}

/// Per-layer activation maps (C×H×W).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    layers: BTreeMap<usize, Tensor>,
}

impl FeatureStack {
    pub fn new(layers: BTreeMap<usize, Tensor>) -> Self {
        FeatureStack { layers }
    }

    pub fn get(&self, layer: usize) -> Option<&Tensor> {
        self.layers.get(&layer)
    }

    pub fn layer_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.layers.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

/// A fixed-weight convolutional feature extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    config: ExtractorConfig,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
}

impl FeatureExtractor {
    /// Seeded He-normal weights.
    pub fn new(config: ExtractorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut cin = 3;
        for s in &config.stages {
            let fan_in = (cin * s.kernel * s.kernel) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
            let n = s.channels * cin * s.kernel * s.kernel;
            let w: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
            weights.push(Tensor::new(vec![s.channels, cin, s.kernel, s.kernel], w)?);
            let b = if config.bias_std > 0.0 {
                let bn = Normal::new(0.0, config.bias_std).expect("valid std");
                (0..s.channels).map(|_| bn.sample(&mut rng)).collect()
            } else {
                vec![0.0; s.channels]
            };
            biases.push(Tensor::new(vec![s.channels], b)?);
            cin = s.channels;
        }
        Ok(FeatureExtractor {
            config,
            weights,
            biases,
        })
    }

    /// Wraps externally supplied weights; kernels are `[out, in, k, k]`.
    pub fn from_weights(config: ExtractorConfig, weights: Vec<Tensor>, biases: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        if weights.len() != config.stages.len() || biases.len() != config.stages.len() {
            return Err(Error::Config(format!(
                "{} stages but {} kernels and {} bias vectors",
                config.stages.len(),
                weights.len(),
                biases.len()
            )));
        }
        let mut cin = 3;
        for (i, s) in config.stages.iter().enumerate() {
            let want = [s.channels, cin, s.kernel, s.kernel];
            if weights[i].shape() != want {
                return Err(Error::Config(format!(
                    "stage {i} kernel has shape {:?}, expected {want:?}",
                    weights[i].shape()
                )));
            }
            if biases[i].shape() != [s.channels] {
                return Err(Error::Config(format!("stage {i} bias has shape {:?}", biases[i].shape())));
            }
            if !weights[i].is_finite() || !biases[i].is_finite() {
                return Err(Error::Numeric(format!("stage {i} parameters are not finite")));
            }
            cin = s.channels;
        }
        Ok(FeatureExtractor {
            config,
            weights,
            biases,
        })
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.config
    }

    pub fn stages(&self) -> usize {
        self.config.stages.len()
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    pub fn biases(&self) -> &[Tensor] {
        &self.biases
    }

    /// Checks every stage up to `layer` keeps a spatial extent of at least 1×1.
    pub fn check_size(&self, height: usize, width: usize, layer: usize) -> Result<()> {
        let (mut h, mut w) = (height, width);
        for (i, s) in self.config.stages.iter().enumerate().take(layer + 1) {
            match (conv_out_len(h, s.kernel, s.stride, s.padding), conv_out_len(w, s.kernel, s.stride, s.padding)) {
                (Some(nh), Some(nw)) if nh >= 1 && nw >= 1 => {
                    h = nh;
                    w = nw;
                }
                _ => {
                    return Err(Error::Size(format!(
                        "input {height}×{width} is too small for layer {i}: stage input is {h}×{w}, kernel {} with padding {}",
                        s.kernel, s.padding
                    )))
                }
            }
        }
        Ok(())
    }

    /// Records stages `0..=upto` on the tape and returns each stage output.
    pub(crate) fn forward_graph(&self, g: &mut Graph, input: Var, upto: usize) -> Vec<Var> {
        let mut outs = Vec::with_capacity(upto + 1);
        let mut x = input;
        for (i, s) in self.config.stages.iter().enumerate().take(upto + 1) {
            let w = g.constant(self.weights[i].clone());
            let b = g.constant(self.biases[i].clone());
            let y = g.conv2d(x, w, Some(b), s.stride, s.padding);
            x = g.activation(y, self.config.activation);
            outs.push(x);
        }
        outs
    }

    pub fn extract_features(&self, image: &Image, layers: &LayerSelection) -> Result<FeatureStack> {
        self.extract_tensor(&image.to_tensor(), layers)
    }

    pub(crate) fn extract_tensor(&self, input: &Tensor, layers: &LayerSelection) -> Result<FeatureStack> {
        layers.validate(self.stages())?;
        let (_, h, w) = input.dims3();
        let deepest = layers.deepest();
        self.check_size(h, w, deepest)?;
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let outs = self.forward_graph(&mut g, x, deepest);
        let map = layers.all().into_iter().map(|l| (l, g.value(outs[l]).clone())).collect();
        Ok(FeatureStack::new(map))
    }
}
