//! Finite-difference audit of analytic loss gradients with respect to the
//! stylized image.

use serde::{Deserialize, Serialize};

use crate::autograd::{Activation, Graph, Reduction};
use crate::data::{Image, TextMask};
use crate::distill::{make_targets, record_distill_loss, DistillTargets, DistillWeights};
use crate::error::Result;
use crate::perceptual::{ExtractorConfig, FeatureExtractor, LayerSelection, LossWeights, PerceptualLoss};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuditKind {
    Total,
    Distill,
}

/// Perceptual objective evaluated at `p`.
#[derive(Debug, Clone)]
pub struct TotalFixture {
    pub extractor: ExtractorConfig,
    pub weights: LossWeights,
    pub content: Image,
    pub style: Image,
    pub p: Tensor,
}

/// Distillation objective evaluated at `p_hat`.
#[derive(Debug, Clone)]
pub struct DistillFixture {
    pub content: Image,
    pub teacher: Image,
    pub mask: TextMask,
    pub weights: DistillWeights,
    pub reduction: Reduction,
    pub p_hat: Tensor,
}

#[derive(Debug, Clone)]
pub enum Fixture {
    Total(TotalFixture),
    Distill(DistillFixture),
}

impl Fixture {
    pub fn kind(&self) -> AuditKind {
        match self {
            Fixture::Total(_) => AuditKind::Total,
            Fixture::Distill(_) => AuditKind::Distill,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditOptions {
    pub tolerance: f64,
    /// Central-difference half step.
    pub step: f64,
    /// Lower bound of the relative-error denominator.
    pub floor: f64,
}

impl AuditOptions {
    pub fn new(tolerance: f64) -> Self {
        AuditOptions {
            tolerance,
            step: 1e-5,
            floor: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub name: String,
    pub kind: AuditKind,
    pub checked: usize,
    /// `max |a − n| / max(|a|, |n|, floor)` over all checked entries.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Evaluation failure, if any; the audit then fails.
    pub error: Option<String>,
}

fn pseudo(h: usize, w: usize, k: usize) -> Image {
    Image::from_fn(h, w, |y, x, c| {
        let t = (y * 31 + x * 17 + c * 11 + k * 7) as f64;
        0.15 + 0.7 * (0.5 + 0.5 * (t * 0.37).sin())
    })
    .expect("values in range")
}

fn smooth_extractor(bias_std: f64) -> ExtractorConfig {
    ExtractorConfig {
        activation: Activation::Smooth,
        seed: 3,
        bias_std,
        ..Default::default()
    }
}

/// 8×8 perceptual fixture with a smooth extractor.
pub fn total_fixture(weights: LossWeights) -> TotalFixture {
    TotalFixture {
        extractor: smooth_extractor(0.05),
        weights,
        content: pseudo(8, 8, 1),
        style: pseudo(8, 8, 2),
        p: pseudo(8, 8, 3).to_tensor(),
    }
}

/// All-zero content and stylized image under a zero-bias smooth extractor.
pub fn zero_image_fixture() -> TotalFixture {
    TotalFixture {
        extractor: smooth_extractor(0.0),
        weights: LossWeights::default(),
        content: Image::filled(8, 8, 0.0).expect("zero image"),
        style: pseudo(8, 8, 4),
        p: Tensor::zeros(&[3, 8, 8]),
    }
}

/// 2×2 checkerboard fixture of the distillation loss.
pub fn distill_fixture() -> DistillFixture {
    DistillFixture {
        content: pseudo(2, 2, 5),
        teacher: pseudo(2, 2, 6),
        mask: TextMask::from_fn(2, 2, |y, x| (y + x) % 2 == 0),
        weights: DistillWeights {
            text: 100.0,
            background: 1.0,
        },
        reduction: Reduction::Mean,
        p_hat: pseudo(2, 2, 7).to_tensor(),
    }
}

/// Named fixtures with their tolerances.
pub fn shipped_fixtures() -> Vec<(&'static str, Fixture, f64)> {
    vec![
        ("total-8x8", Fixture::Total(total_fixture(LossWeights::default())), 1e-4),
        (
            "total-8x8-content-only",
            Fixture::Total(total_fixture(LossWeights {
                content: 1.0,
                style: 0.0,
            })),
            1e-4,
        ),
        ("total-zero-image", Fixture::Total(zero_image_fixture()), 1e-4),
        ("distill-2x2", Fixture::Distill(distill_fixture()), 1e-6),
    ]
}

/// Loss and gradient at `x`, and the loss alone at perturbed points.
trait Objective {
    fn value_and_grad(&self, x: &Tensor) -> Result<(f64, Tensor)>;
    fn value(&self, x: &Tensor) -> Result<f64>;
}

struct TotalObjective<'a> {
    loss: PerceptualLoss<'a>,
    features: Tensor,
    grams: Vec<crate::perceptual::GramMatrix>,
}

impl Objective for TotalObjective<'_> {
    fn value_and_grad(&self, x: &Tensor) -> Result<(f64, Tensor)> {
        let (b, g) = self.loss.evaluate_tensor(&self.features, &self.grams, x, true)?;
        Ok((b.total, g.expect("requested gradient")))
    }

    fn value(&self, x: &Tensor) -> Result<f64> {
        Ok(self.loss.evaluate_tensor(&self.features, &self.grams, x, false)?.0.total)
    }
}

struct DistillObjective<'a> {
    fixture: &'a DistillFixture,
    targets: DistillTargets,
}

impl DistillObjective<'_> {
    fn run(&self, x: &Tensor, grad: bool) -> Result<(f64, Option<Tensor>)> {
        let mut g = Graph::new();
        let v = if grad { g.param(x.clone()) } else { g.constant(x.clone()) };
        let f = self.fixture;
        let loss = record_distill_loss(&mut g, v, &self.targets, &f.mask, f.weights, f.reduction)?;
        let value = g.value(loss).item();
        Ok((value, grad.then(|| g.backward(loss).take(v).unwrap_or_else(|| Tensor::zeros(x.shape())))))
    }
}

impl Objective for DistillObjective<'_> {
    fn value_and_grad(&self, x: &Tensor) -> Result<(f64, Tensor)> {
        let (v, g) = self.run(x, true)?;
        Ok((v, g.expect("requested gradient")))
    }

    fn value(&self, x: &Tensor) -> Result<f64> {
        Ok(self.run(x, false)?.0)
    }
}

fn compare(obj: &dyn Objective, x: &Tensor, opts: &AuditOptions) -> Result<(usize, f64, f64)> {
    let (_, grad) = obj.value_and_grad(x)?;
    let (mut max_rel, mut max_abs) = (0.0f64, 0.0f64);
    for i in 0..x.len() {
        let mut a = x.clone();
        a.data_mut()[i] += opts.step;
        let mut b = x.clone();
        b.data_mut()[i] -= opts.step;
        let numeric = (obj.value(&a)? - obj.value(&b)?) / (2.0 * opts.step);
        let analytic = grad.data()[i];
        let abs = (numeric - analytic).abs();
        let rel = abs / numeric.abs().max(analytic.abs()).max(opts.floor);
        if !rel.is_finite() {
            return Err(crate::error::Error::Numeric(format!("entry {i}: analytic {analytic}, numeric {numeric}")));
        }
        max_rel = max_rel.max(rel);
        max_abs = max_abs.max(abs);
    }
    Ok((x.len(), max_rel, max_abs))
}

fn run_fixture(fixture: &Fixture, opts: &AuditOptions) -> Result<(usize, f64, f64)> {
    match fixture {
        Fixture::Total(f) => {
            let extractor = FeatureExtractor::new(f.extractor.clone())?;
            let layers = LayerSelection::default_for(extractor.stages());
            let loss = PerceptualLoss::new(&extractor, layers, f.weights)?;
            let grams = loss.style_grams(&f.style)?;
            let features = loss.content_features(&f.content)?;
            compare(&TotalObjective { loss, features, grams }, &f.p, opts)
        }
        Fixture::Distill(f) => {
            let targets = make_targets(&f.content, &f.teacher, &f.mask)?;
            compare(&DistillObjective { fixture: f, targets }, &f.p_hat, opts)
        }
    }
}

/// Compares analytic and central-difference gradients on every entry of
/// the fixture's evaluation point.
pub fn grad_audit(name: &str, fixture: &Fixture, opts: AuditOptions) -> AuditReport {
    let base = AuditReport {
        name: name.to_string(),
        kind: fixture.kind(),
        checked: 0,
        max_rel_error: f64::INFINITY,
        max_abs_error: f64::INFINITY,
        tolerance: opts.tolerance,
        passed: false,
        error: None,
    };
    match run_fixture(fixture, &opts) {
        Ok((checked, max_rel, max_abs)) => AuditReport {
            checked,
            max_rel_error: max_rel,
            max_abs_error: max_abs,
            passed: max_rel < opts.tolerance,
            ..base
        },
        Err(e) => AuditReport {
            error: Some(e.to_string()),
            ..base
        },
    }
}

/// Audits every shipped fixture at its own tolerance.
pub fn audit_shipped() -> Vec<AuditReport> {
    shipped_fixtures()
        .iter()
        .map(|(name, f, tol)| grad_audit(name, f, AuditOptions::new(*tol)))
        .collect()
}
