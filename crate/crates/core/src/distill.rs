//! End-to-end selective model: a student network trained to reproduce a
//! frozen teacher inside the text mask and the untouched content outside it.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Reduction, Var};
use crate::data::{rasterize_mask, DatasetManifest, Image, TextMask};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::style_net::{Conditioning, StyleNetwork, StyleWeights};
use crate::tensor::Tensor;
use crate::trace::LossTrace;

/// `θ_s = p ⊙ M` and `θ_c = c ⊙ (1 − M)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillTargets {
    pub theta_s: Image,
    pub theta_c: Image,
}

/// Text and background weights of the distillation loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillWeights {
    pub text: f64,
    pub background: f64,
}

impl DistillWeights {
    pub fn new(text: f64, background: f64) -> Result<Self> {
        let w = DistillWeights { text, background };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("text", self.text), ("background", self.background)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} weight must be finite and ≥ 0, got {v}")));
            }
        }
        Ok(())
    }
}

fn mask_channels(mask: &TextMask, invert: bool) -> Vec<f64> {
    let plane: Vec<f64> = mask
        .data()
        .iter()
        .map(|&m| if invert { 1.0 - m as f64 } else { m as f64 })
        .collect();
    let mut out = Vec::with_capacity(plane.len() * 3);
    for _ in 0..3 {
        out.extend_from_slice(&plane);
    }
    out
}

fn check_sizes(images: &[(&str, &Image)], mask: &TextMask) -> Result<()> {
    for (name, img) in images {
        if (img.height(), img.width()) != (mask.height(), mask.width()) {
            return Err(Error::Contract(format!(
                "{name} is {}×{} but the mask is {}×{}",
                img.height(),
                img.width(),
                mask.height(),
                mask.width()
            )));
        }
    }
    Ok(())
}

/// Masks the teacher output to text and the content to background.
pub fn make_targets(c: &Image, p: &Image, mask: &TextMask) -> Result<DistillTargets> {
    check_sizes(&[("content", c), ("teacher output", p)], mask)?;
    let (h, w) = (mask.height(), mask.width());
    let theta_s = Image::from_fn(h, w, |y, x, ch| if mask.get(y, x) { p.get(y, x, ch) } else { 0.0 })?;
    let theta_c = Image::from_fn(h, w, |y, x, ch| if mask.get(y, x) { 0.0 } else { c.get(y, x, ch) })?;
    Ok(DistillTargets { theta_s, theta_c })
}

/// `λ_text·R((p̂ ⊙ M − θ_s)²) + λ_bg·R((p̂ ⊙ (1 − M) − θ_c)²)`.
pub fn distill_loss(
    p_hat: &Image,
    targets: &DistillTargets,
    mask: &TextMask,
    w: DistillWeights,
    reduction: Reduction,
) -> Result<f64> {
    let mut g = Graph::new();
    let p = g.constant(p_hat.to_tensor());
    let loss = record_distill_loss(&mut g, p, targets, mask, w, reduction)?;
    Ok(g.value(loss).item())
}

/// Records [`distill_loss`] on `g` for a 3×H×W node `p_hat`.
pub fn record_distill_loss(
    g: &mut Graph,
    p_hat: Var,
    targets: &DistillTargets,
    mask: &TextMask,
    w: DistillWeights,
    reduction: Reduction,
) -> Result<Var> {
    w.validate()?;
    check_sizes(&[("θ_s", &targets.theta_s), ("θ_c", &targets.theta_c)], mask)?;
    let shape = vec![3, mask.height(), mask.width()];
    if g.value(p_hat).shape() != shape.as_slice() {
        return Err(Error::Contract(format!(
            "prediction has shape {:?}, expected {shape:?}",
            g.value(p_hat).shape()
        )));
    }
    let m = Tensor::new(shape.clone(), mask_channels(mask, false))?;
    let inv = Tensor::new(shape, mask_channels(mask, true))?;
    let text = g.mul_const(p_hat, m);
    let text = g.squared_error(text, &targets.theta_s.to_tensor(), reduction);
    let bg = g.mul_const(p_hat, inv);
    let bg = g.squared_error(bg, &targets.theta_c.to_tensor(), reduction);
    Ok(g.weighted_sum(&[(text, w.text), (bg, w.background)]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillPhase {
    pub epochs: usize,
    pub weights: DistillWeights,
}

/// Style condition used while distilling a multi-style teacher.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StyleMode {
    /// The given style weights for the whole run.
    #[default]
    Fixed,
    /// A uniformly drawn one-hot style per batch.
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillSchedule {
    pub phases: Vec<DistillPhase>,
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub style_mode: StyleMode,
    #[serde(default)]
    pub reduction: Reduction,
    /// Precompute teacher outputs once instead of on every step.
    #[serde(default)]
    pub cache_teacher: bool,
}

impl Default for DistillSchedule {
    fn default() -> Self {
        DistillSchedule {
            phases: vec![
                DistillPhase {
                    epochs: 77,
                    weights: DistillWeights {
                        text: 100.0,
                        background: 1.0,
                    },
                },
                DistillPhase {
                    epochs: 50,
                    weights: DistillWeights {
                        text: 1.0,
                        background: 1.0,
                    },
                },
            ],
            optimizer: AdamConfig::default(),
            batch_size: 1,
            seed: 0,
            style_mode: StyleMode::Fixed,
            reduction: Reduction::Mean,
            cache_teacher: false,
        }
    }
}

impl DistillSchedule {
    /// A single phase of `epochs` epochs with the given weights.
    pub fn single(epochs: usize, weights: DistillWeights) -> Self {
        DistillSchedule {
            phases: vec![DistillPhase { epochs, weights }],
            ..Default::default()
        }
    }

    /// Replaces every phase's epoch count.
    pub fn with_epochs(mut self, epochs: &[usize]) -> Result<Self> {
        if epochs.len() != self.phases.len() {
            return Err(Error::Config(format!(
                "{} epoch counts for {} phases",
                epochs.len(),
                self.phases.len()
            )));
        }
        for (p, &e) in self.phases.iter_mut().zip(epochs) {
            p.epochs = e;
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .phases
            .first()
            .ok_or_else(|| Error::Config("a schedule needs at least one phase".into()))?;
        for p in &self.phases {
            p.weights.validate()?;
        }
        if first.weights.text <= first.weights.background {
            return Err(Error::Config(format!(
                "the first phase must weight text above background, got {} ≤ {}",
                first.weights.text, first.weights.background
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        self.optimizer.validate()
    }

    pub fn total_epochs(&self) -> usize {
        self.phases.iter().map(|p| p.epochs).sum()
    }
}

/// One training image with its rasterized text mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillSample {
    pub content: Image,
    pub mask: TextMask,
}

impl DistillSample {
    pub fn new(content: Image, mask: TextMask) -> Result<Self> {
        check_sizes(&[("content", &content)], &mask)?;
        Ok(DistillSample { content, mask })
    }
}

/// Loads every manifest entry, crops it to the network's size multiple from
/// the top-left corner and rasterizes its annotations.
pub fn load_samples(dataset: &DatasetManifest, size_multiple: usize) -> Result<Vec<DistillSample>> {
    dataset
        .entries
        .iter()
        .map(|e| {
            let img = crate::data::load_image(dataset.resolve(&e.image))?;
            let h = img.height() / size_multiple * size_multiple;
            let w = img.width() / size_multiple * size_multiple;
            if h == 0 || w == 0 {
                return Err(Error::Size(format!(
                    "{} is smaller than the network's size multiple {size_multiple}",
                    e.image.display()
                )));
            }
            let content = Image::from_fn(h, w, |y, x, c| img.get(y, x, c))?;
            let annots = dataset.load_annotations(e)?;
            let mask = rasterize_mask(&annots, h, w)?;
            DistillSample::new(content, mask)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct DistillOutcome {
    pub student: StyleNetwork,
    /// One entry per optimizer step; `phase` is the schedule phase index.
    pub trace: LossTrace,
    /// Mean step loss of every epoch, in order.
    pub epoch_losses: Vec<f64>,
}

/// Distills `teacher` into a freshly initialized student over a manifest.
pub fn train_student(
    teacher: &StyleNetwork,
    dataset: &DatasetManifest,
    schedule: &DistillSchedule,
    w_style: &StyleWeights,
) -> Result<DistillOutcome> {
    if dataset.is_empty() {
        return Err(Error::Config("distillation dataset is empty".into()));
    }
    let samples = load_samples(dataset, teacher.config().size_multiple())?;
    train_student_on(teacher, &samples, schedule, w_style)
}

/// Distills `teacher` into a student initialized with the teacher's
/// architecture and the schedule's seed.
pub fn train_student_on(
    teacher: &StyleNetwork,
    samples: &[DistillSample],
    schedule: &DistillSchedule,
    w_style: &StyleWeights,
) -> Result<DistillOutcome> {
    schedule.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("distillation dataset is empty".into()));
    }
    if w_style.len() != teacher.styles() {
        return Err(Error::Config(format!(
            "{} style weights for a teacher with {} styles",
            w_style.len(),
            teacher.styles()
        )));
    }
    for s in samples {
        teacher.check_input(s.content.height(), s.content.width())?;
    }
    let styles = teacher.styles();
    let mut student = StyleNetwork::new(teacher.config().clone().with_seed(schedule.seed))?;
    let mut trace = LossTrace::default();
    let mut epoch_losses = Vec::new();
    if schedule.total_epochs() == 0 {
        return Ok(DistillOutcome {
            student,
            trace,
            epoch_losses,
        });
    }

    let style_options: Vec<StyleWeights> = match schedule.style_mode {
        StyleMode::Fixed => vec![w_style.clone()],
        StyleMode::Sampled => (0..styles)
            .map(|k| StyleWeights::one_hot(styles, k))
            .collect::<Result<_>>()?,
    };
    let cache: Option<Vec<Vec<Image>>> = if schedule.cache_teacher {
        Some(
            samples
                .par_iter()
                .map(|s| style_options.iter().map(|w| teacher.forward(&s.content, w)).collect())
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };

    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut opt = Adam::new(schedule.optimizer, &student.params())?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut step = 0;
    for (phase_index, phase) in schedule.phases.iter().enumerate() {
        for _ in 0..phase.epochs {
            order.shuffle(&mut rng);
            let mut epoch_sum = 0.0;
            let mut epoch_steps = 0;
            for batch in order.chunks(schedule.batch_size) {
                let option = match schedule.style_mode {
                    StyleMode::Fixed => 0,
                    StyleMode::Sampled => rng.random_range(0..styles),
                };
                let w = &style_options[option];
                let net = &student;
                let results: Vec<(f64, Vec<Vec<f64>>)> = batch
                    .par_iter()
                    .map(|&i| {
                        let s = &samples[i];
                        let p = match &cache {
                            Some(c) => c[i][option].clone(),
                            None => teacher.forward(&s.content, w)?,
                        };
                        let targets = make_targets(&s.content, &p, &s.mask)?;
                        sample_gradient(net, s, &targets, w, phase.weights, schedule.reduction)
                    })
                    .collect::<Result<_>>()?;
                let (loss, grads) = average(results);
                if !loss.is_finite() {
                    return Err(Error::Diverged { step, loss });
                }
                opt.step(student.params_mut(), &grads)?;
                trace.push(step, phase_index, loss);
                epoch_sum += loss;
                epoch_steps += 1;
                step += 1;
            }
            epoch_losses.push(epoch_sum / epoch_steps as f64);
        }
    }
    Ok(DistillOutcome {
        student,
        trace,
        epoch_losses,
    })
}

fn sample_gradient(
    net: &StyleNetwork,
    s: &DistillSample,
    targets: &DistillTargets,
    w: &StyleWeights,
    weights: DistillWeights,
    reduction: Reduction,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut g = Graph::new();
    let x = g.constant(s.content.to_tensor());
    let rec = net.record(&mut g, x, Conditioning::Mix(w), true)?;
    let loss = record_distill_loss(&mut g, rec.output, targets, &s.mask, weights, reduction)?;
    let value = g.value(loss).item();
    let mut grads = g.backward(loss);
    Ok((value, rec.collect(net, &mut grads)))
}

/// Mean loss and mean gradient, summed in batch order.
pub(crate) fn average(results: Vec<(f64, Vec<Vec<f64>>)>) -> (f64, Vec<Vec<f64>>) {
    let n = results.len() as f64;
    let mut iter = results.into_iter();
    let (mut loss, mut grads) = iter.next().expect("non-empty batch");
    for (l, g) in iter {
        loss += l;
        for (acc, gi) in grads.iter_mut().zip(g) {
            for (a, b) in acc.iter_mut().zip(gi) {
                *a += b;
            }
        }
    }
    if n > 1.0 {
        for acc in &mut grads {
            for a in acc.iter_mut() {
                *a /= n;
            }
        }
    }
    (loss / n, grads)
}
