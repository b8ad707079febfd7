use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use serde_json::json;
use textstyle::augment::{augment as run_augment, AugmentMode, AugmentSpec, StyleSelection};
use textstyle::autograd::{Activation, Reduction};
use textstyle::data::{load_annotations, load_image, load_probmap, save_image, AnnotationFormat, DatasetManifest};
use textstyle::distill::{train_student, DistillPhase, DistillSchedule, DistillWeights, StyleMode};
use textstyle::optim::AdamConfig;
use textstyle::perceptual::{ExtractorConfig, LayerSelection, LossOptions, LossWeights};
use textstyle::selective::{blend as run_blend, stylize_selective, ProbMapProvider, ProbMapQuery};
use textstyle::style_net::{NetworkConfig, StyleWeights};
use textstyle::trainer::{
    audit_shipped, load_checkpoint, load_checkpoint_full, save_checkpoint_with, train_baseline, TrainConfig,
};

use crate::settings::Settings;
use crate::{CliError, Common};

type CmdResult = Result<(), CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_reduction(s: &str) -> Result<Reduction, CliError> {
    match s {
        "mean" => Ok(Reduction::Mean),
        "sum" => Ok(Reduction::Sum),
        _ => Err(usage(format!("reduction must be mean or sum, got {s:?}"))),
    }
}

fn parse_activation(s: &str) -> Result<Activation, CliError> {
    match s {
        "relu" => Ok(Activation::Relu),
        "smooth" => Ok(Activation::Smooth),
        _ => Err(usage(format!("extractor activation must be relu or smooth, got {s:?}"))),
    }
}

fn parse_annotation_format(s: &str) -> Result<AnnotationFormat, CliError> {
    match s {
        "quad" => Ok(AnnotationFormat::Quad),
        "box" => Ok(AnnotationFormat::Box),
        _ => Err(usage(format!("annotation format must be quad or box, got {s:?}"))),
    }
}

/// Keys shared by the commands that take a probability-map provider.
const PROVIDER_KEYS: &[&str] = &["provider", "radius", "probability"];

#[derive(Debug, Args, Clone, Default)]
pub struct ProviderArgs {
    /// none, constant, feathered or file
    #[arg(long)]
    provider: Option<String>,
    /// Feathering radius in pixels (feathered provider)
    #[arg(long)]
    radius: Option<f64>,
    /// Constant text probability (constant provider)
    #[arg(long)]
    probability: Option<f64>,
}

fn resolve_provider(s: &Settings, a: &ProviderArgs, default: &str) -> Result<Option<ProbMapProvider>, CliError> {
    let name = s.get_or(a.provider.clone(), "provider", default.to_string())?;
    Ok(match name.as_str() {
        "none" => None,
        "constant" => Some(ProbMapProvider::Constant(s.require(a.probability, "probability")?)),
        "feathered" => Some(ProbMapProvider::Feathered {
            radius: s.get_or(a.radius, "radius", 0.0)?,
        }),
        "file" => Some(ProbMapProvider::File),
        other => {
            return Err(usage(format!(
                "provider must be none, constant, feathered or file, got {other:?}"
            )))
        }
    })
}

/// Exactly one of an index and a weight list, from flags or config. A flag of
/// either kind hides both config keys.
fn resolve_style(
    s: &Settings,
    index: Option<usize>,
    weights: Option<Vec<f64>>,
    styles: usize,
) -> Result<Option<StyleWeights>, CliError> {
    let (index, weights) = if index.is_some() || weights.is_some() {
        (index, weights)
    } else {
        (s.get(None, "style_index")?, s.list(None, "style_weights")?)
    };
    let w = match (index, weights) {
        (Some(_), Some(_)) => return Err(usage("--style-index and --style-weights are mutually exclusive")),
        (None, None) => return Ok(None),
        (Some(k), None) => StyleWeights::one_hot(styles, k),
        (None, Some(w)) => {
            if w.len() != styles {
                return Err(usage(format!("{} style weights for a {styles}-style network", w.len())));
            }
            StyleWeights::new(w)
        }
    };
    w.map(Some).map_err(|e| usage(e.to_string()))
}

fn require_out(s: &Settings, common: &Common) -> Result<PathBuf, CliError> {
    s.require(common.out.clone(), "out")
}

fn require_checkpoint(s: &Settings, common: &Common) -> Result<PathBuf, CliError> {
    s.require(common.checkpoint.clone(), "checkpoint")
}

fn write_trace(csv: &str, path: &Path) -> anyhow::Result<()> {
    std::fs::write(path, csv).with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Args)]
pub struct TrainStyleArgs {
    /// Style images, one per style, comma separated
    #[arg(long, value_delimiter = ',')]
    style_images: Option<Vec<PathBuf>>,
    /// Dataset manifest of content images
    #[arg(long)]
    content_manifest: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    content_weight: Option<f64>,
    #[arg(long)]
    style_weight: Option<f64>,
    /// Extractor stage used for the content loss
    #[arg(long)]
    content_layer: Option<usize>,
    /// Extractor stages used for the style loss, comma separated
    #[arg(long, value_delimiter = ',')]
    style_layers: Option<Vec<usize>>,
    /// mean or sum
    #[arg(long)]
    reduction: Option<String>,
    #[arg(long)]
    normalize_gram: Option<bool>,
    /// Side of the square content crop
    #[arg(long)]
    crop: Option<usize>,
    #[arg(long)]
    base_width: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    down_widths: Option<Vec<usize>>,
    #[arg(long)]
    residual_blocks: Option<usize>,
    #[arg(long)]
    outer_kernel: Option<usize>,
    #[arg(long)]
    inner_kernel: Option<usize>,
    #[arg(long)]
    extractor_seed: Option<u64>,
    /// relu or smooth
    #[arg(long)]
    extractor_activation: Option<String>,
    /// Loss trace CSV; defaults to the checkpoint path with a .csv extension
    #[arg(long)]
    trace: Option<PathBuf>,
}

const TRAIN_STYLE_KEYS: &[&str] = &[
    "style_images",
    "content_manifest",
    "steps",
    "batch_size",
    "lr",
    "content_weight",
    "style_weight",
    "content_layer",
    "style_layers",
    "reduction",
    "normalize_gram",
    "crop",
    "base_width",
    "down_widths",
    "residual_blocks",
    "outer_kernel",
    "inner_kernel",
    "extractor_seed",
    "extractor_activation",
    "trace",
];

fn network_config(
    s: &Settings,
    base_width: Option<usize>,
    down_widths: Option<Vec<usize>>,
    residual_blocks: Option<usize>,
    outer_kernel: Option<usize>,
    inner_kernel: Option<usize>,
) -> Result<NetworkConfig, CliError> {
    let d = NetworkConfig::default();
    let base_width = s.get_or(base_width, "base_width", d.base_width)?;
    let down_widths = s.list(down_widths, "down_widths")?.unwrap_or(d.down_widths);
    let up_widths = if down_widths.is_empty() {
        Vec::new()
    } else {
        down_widths
            .iter()
            .rev()
            .skip(1)
            .copied()
            .chain(std::iter::once(base_width))
            .collect()
    };
    Ok(NetworkConfig {
        base_width,
        down_widths,
        up_widths,
        residual_blocks: s.get_or(residual_blocks, "residual_blocks", d.residual_blocks)?,
        outer_kernel: s.get_or(outer_kernel, "outer_kernel", d.outer_kernel)?,
        inner_kernel: s.get_or(inner_kernel, "inner_kernel", d.inner_kernel)?,
        ..d
    })
}

pub fn train_style(common: &Common, a: TrainStyleArgs) -> CmdResult {
    let s = Settings::load(common.config.as_deref(), "train-style", TRAIN_STYLE_KEYS)?;
    let out = require_out(&s, common)?;
    let seed = s.get_or(common.seed, "seed", 0)?;
    let style_images = s
        .list(a.style_images, "style_images")?
        .filter(|v| !v.is_empty())
        .ok_or_else(|| usage("--style-images (config key style_images) is required"))?;
    let content_manifest: PathBuf = s.require(a.content_manifest, "content_manifest")?;
    let d = TrainConfig::default();

    let extractor = ExtractorConfig {
        seed: s.get_or(a.extractor_seed, "extractor_seed", 0)?,
        activation: parse_activation(&s.get_or(a.extractor_activation, "extractor_activation", "relu".into())?)?,
        ..Default::default()
    };
    let style_layers = s.list(a.style_layers, "style_layers")?;
    let content_layer = s.get(a.content_layer, "content_layer")?;
    let layers = match (content_layer, style_layers) {
        (None, None) => None,
        (c, st) => {
            let def = LayerSelection::default_for(extractor.stages.len());
            Some(LayerSelection {
                content: c.unwrap_or(def.content),
                style: st.unwrap_or(def.style),
            })
        }
    };
    let network = network_config(
        &s,
        a.base_width,
        a.down_widths,
        a.residual_blocks,
        a.outer_kernel,
        a.inner_kernel,
    )?
    .with_styles(style_images.len())
    .with_seed(seed);

    let config = TrainConfig {
        steps: s.get_or(a.steps, "steps", d.steps)?,
        batch_size: s.get_or(a.batch_size, "batch_size", d.batch_size)?,
        optimizer: AdamConfig::default().with_lr(s.get_or(a.lr, "lr", d.optimizer.lr)?),
        weights: LossWeights {
            content: s.get_or(a.content_weight, "content_weight", d.weights.content)?,
            style: s.get_or(a.style_weight, "style_weight", d.weights.style)?,
        },
        layers,
        loss: LossOptions {
            reduction: parse_reduction(&s.get_or(a.reduction, "reduction", "mean".into())?)?,
            normalize_gram: s.get_or(a.normalize_gram, "normalize_gram", d.loss.normalize_gram)?,
        },
        style_images,
        content_manifest: Some(content_manifest),
        crop: s.get_or(a.crop, "crop", d.crop)?,
        seed,
        network,
        extractor,
    };
    config.validate().map_err(|e| usage(e.to_string()))?;

    let outcome = train_baseline(&config)?;
    let trace = outcome.trace();
    let metadata = json!({
        "command": "train-style",
        "seed": seed,
        "steps": config.steps,
        "style_images": config.style_images,
        "content_manifest": config.content_manifest,
        "final_loss": trace.last_loss(),
    });
    save_checkpoint_with(&outcome.network, &out, Some(&config.extractor), metadata)?;
    let trace_path = s.get(a.trace, "trace")?.unwrap_or_else(|| out.with_extension("csv"));
    write_trace(&trace.to_csv(), &trace_path)?;
    println!(
        "trained {} styles for {} steps; checkpoint {}, trace {}",
        config.network.styles,
        config.steps,
        out.display(),
        trace_path.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainDistillArgs {
    /// Annotated dataset manifest
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    phase1_epochs: Option<usize>,
    #[arg(long)]
    phase1_text_weight: Option<f64>,
    #[arg(long)]
    phase1_background_weight: Option<f64>,
    #[arg(long)]
    phase2_epochs: Option<usize>,
    #[arg(long)]
    phase2_text_weight: Option<f64>,
    #[arg(long)]
    phase2_background_weight: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// fixed or sampled
    #[arg(long)]
    style_mode: Option<String>,
    #[arg(long)]
    style_index: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    style_weights: Option<Vec<f64>>,
    #[arg(long)]
    cache_teacher: Option<bool>,
    /// mean or sum
    #[arg(long)]
    reduction: Option<String>,
    /// Loss trace CSV; defaults to the checkpoint path with a .csv extension
    #[arg(long)]
    trace: Option<PathBuf>,
}

const TRAIN_DISTILL_KEYS: &[&str] = &[
    "manifest",
    "phase1_epochs",
    "phase1_text_weight",
    "phase1_background_weight",
    "phase2_epochs",
    "phase2_text_weight",
    "phase2_background_weight",
    "lr",
    "batch_size",
    "style_mode",
    "style_index",
    "style_weights",
    "cache_teacher",
    "reduction",
    "trace",
];

pub fn train_distill(common: &Common, a: TrainDistillArgs) -> CmdResult {
    let s = Settings::load(common.config.as_deref(), "train-distill", TRAIN_DISTILL_KEYS)?;
    let out = require_out(&s, common)?;
    let teacher_path = require_checkpoint(&s, common)?;
    let manifest: PathBuf = s.require(a.manifest, "manifest")?;
    let seed = s.get_or(common.seed, "seed", 0)?;
    let d = DistillSchedule::default();

    let phase = |i: usize, epochs, text, bg| -> Result<DistillPhase, CliError> {
        let dp = d.phases[i];
        Ok(DistillPhase {
            epochs: s.get_or(epochs, &format!("phase{}_epochs", i + 1), dp.epochs)?,
            weights: DistillWeights {
                text: s.get_or(text, &format!("phase{}_text_weight", i + 1), dp.weights.text)?,
                background: s.get_or(bg, &format!("phase{}_background_weight", i + 1), dp.weights.background)?,
            },
        })
    };
    let phases = vec![
        phase(0, a.phase1_epochs, a.phase1_text_weight, a.phase1_background_weight)?,
        phase(1, a.phase2_epochs, a.phase2_text_weight, a.phase2_background_weight)?,
    ];
    let style_mode = match s.get_or(a.style_mode, "style_mode", "fixed".to_string())?.as_str() {
        "fixed" => StyleMode::Fixed,
        "sampled" => StyleMode::Sampled,
        other => return Err(usage(format!("style mode must be fixed or sampled, got {other:?}"))),
    };
    let schedule = DistillSchedule {
        phases,
        optimizer: AdamConfig::default().with_lr(s.get_or(a.lr, "lr", d.optimizer.lr)?),
        batch_size: s.get_or(a.batch_size, "batch_size", d.batch_size)?,
        seed,
        style_mode,
        reduction: parse_reduction(&s.get_or(a.reduction, "reduction", "mean".into())?)?,
        cache_teacher: s.get_or(a.cache_teacher, "cache_teacher", d.cache_teacher)?,
    };
    schedule.validate().map_err(|e| usage(e.to_string()))?;

    let teacher = load_checkpoint_full(&teacher_path)?;
    let n = teacher.network.styles();
    let w = resolve_style(&s, a.style_index, a.style_weights, n)?
        .map_or_else(|| StyleWeights::one_hot(n, 0), Ok)?;
    let dataset = DatasetManifest::load(&manifest)?;
    let outcome = train_student(&teacher.network, &dataset, &schedule, &w)?;

    let metadata = json!({
        "command": "train-distill",
        "seed": seed,
        "teacher": teacher_path,
        "teacher_fingerprint": teacher.network.fingerprint(),
        "manifest": manifest,
        "style_weights": w.as_slice(),
        "schedule": schedule,
        "final_loss": outcome.trace.last_loss(),
    });
    save_checkpoint_with(&outcome.student, &out, teacher.extractor.as_ref(), metadata)?;
    let trace_path = s.get(a.trace, "trace")?.unwrap_or_else(|| out.with_extension("csv"));
    write_trace(&outcome.trace.to_csv(), &trace_path)?;
    println!(
        "distilled {} epochs over {} images; checkpoint {}, trace {}",
        schedule.total_epochs(),
        dataset.len(),
        out.display(),
        trace_path.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct StylizeArgs {
    /// Image to stylize
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    style_index: Option<usize>,
    /// Convex style weights, comma separated
    #[arg(long, value_delimiter = ',')]
    style_weights: Option<Vec<f64>>,
    #[command(flatten)]
    provider: ProviderArgs,
    /// Text annotations of the input (feathered provider)
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// quad or box
    #[arg(long)]
    annotation_format: Option<String>,
    /// Text heatmap of the input (file provider)
    #[arg(long)]
    heatmap: Option<PathBuf>,
}

const STYLIZE_KEYS: &[&str] = &[
    "input",
    "style_index",
    "style_weights",
    "annotations",
    "annotation_format",
    "heatmap",
];

pub fn stylize(common: &Common, a: StylizeArgs) -> CmdResult {
    let known: Vec<&str> = STYLIZE_KEYS.iter().chain(PROVIDER_KEYS).copied().collect();
    let s = Settings::load(common.config.as_deref(), "stylize", &known)?;
    let out = require_out(&s, common)?;
    let input: PathBuf = s.require(a.input, "input")?;
    let ckpt = require_checkpoint(&s, common)?;
    let provider = resolve_provider(&s, &a.provider, "none")?;
    let annotations: Option<PathBuf> = s.get(a.annotations, "annotations")?;
    let heatmap: Option<PathBuf> = s.get(a.heatmap, "heatmap")?;
    let format = parse_annotation_format(&s.get_or(a.annotation_format, "annotation_format", "quad".into())?)?;
    match provider {
        Some(ProbMapProvider::Feathered { .. }) if annotations.is_none() => {
            return Err(usage("the feathered provider needs --annotations"))
        }
        Some(ProbMapProvider::File) if heatmap.is_none() => {
            return Err(usage("the file provider needs --heatmap"))
        }
        _ => {}
    }

    let net = load_checkpoint(&ckpt)?;
    let w = resolve_style(&s, a.style_index, a.style_weights, net.styles())?
        .ok_or_else(|| usage("one of --style-index and --style-weights is required"))?;
    let image = load_image(&input)?;
    let result = match &provider {
        None => net.forward_padded(&image, &w)?,
        Some(p) => {
            let annots = annotations.as_ref().map(|p| load_annotations(p, format)).transpose()?;
            let mut q = ProbMapQuery::new(&image);
            if let Some(an) = &annots {
                q = q.with_annotations(an);
            }
            if let Some(h) = &heatmap {
                q = q.with_heatmap(h);
            }
            stylize_selective(&net, p, &q, &w)?
        }
    };
    save_image(&result, &out)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct BlendArgs {
    /// Original image
    #[arg(long)]
    content: Option<PathBuf>,
    /// Stylized image of the same size
    #[arg(long)]
    stylized: Option<PathBuf>,
    /// Text probability map image
    #[arg(long)]
    probmap: Option<PathBuf>,
    /// Constant text probability instead of a map
    #[arg(long)]
    probability: Option<f64>,
}

const BLEND_KEYS: &[&str] = &["content", "stylized", "probmap", "probability"];

pub fn blend(common: &Common, a: BlendArgs) -> CmdResult {
    let s = Settings::load(common.config.as_deref(), "blend", BLEND_KEYS)?;
    let out = require_out(&s, common)?;
    let content: PathBuf = s.require(a.content, "content")?;
    let stylized: PathBuf = s.require(a.stylized, "stylized")?;
    let (probmap, probability) = if a.probmap.is_some() || a.probability.is_some() {
        (a.probmap, a.probability)
    } else {
        (s.get(None, "probmap")?, s.get(None, "probability")?)
    };
    let c = load_image(&content)?;
    let p = load_image(&stylized)?;
    let pt = match (probmap, probability) {
        (Some(_), Some(_)) => return Err(usage("--probmap and --probability are mutually exclusive")),
        (None, None) => return Err(usage("one of --probmap and --probability is required")),
        (Some(path), None) => load_probmap(&path)?,
        (None, Some(v)) => textstyle::data::TextProbMap::constant(c.height(), c.width(), v)
            .map_err(|e| usage(e.to_string()))?,
    };
    save_image(&run_blend(&c, &p, &pt)?, &out)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Annotated dataset manifest
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    styles_per_image: Option<usize>,
    /// two-stage or end-to-end
    #[arg(long)]
    mode: Option<String>,
    #[command(flatten)]
    provider: ProviderArgs,
    /// Explicit style indices used for every image, comma separated
    #[arg(long, value_delimiter = ',')]
    styles: Option<Vec<usize>>,
    /// Leave the originals out of the output
    #[arg(long)]
    variants_only: bool,
}

const AUGMENT_KEYS: &[&str] = &["manifest", "styles_per_image", "mode", "styles", "variants_only"];

pub fn augment(common: &Common, a: AugmentArgs) -> CmdResult {
    let known: Vec<&str> = AUGMENT_KEYS.iter().chain(PROVIDER_KEYS).copied().collect();
    let s = Settings::load(common.config.as_deref(), "augment", &known)?;
    let out_dir = require_out(&s, common)?;
    let ckpt = require_checkpoint(&s, common)?;
    let manifest: PathBuf = s.require(a.manifest, "manifest")?;
    let styles = s.list(a.styles, "styles")?;
    let styles_per_image = match (s.get(a.styles_per_image, "styles_per_image")?, &styles) {
        (Some(n), _) => n,
        (None, Some(list)) => list.len(),
        (None, None) => 1,
    };
    let mode = match s.get_or(a.mode, "mode", "two-stage".to_string())?.as_str() {
        "two-stage" => AugmentMode::TwoStage {
            provider: resolve_provider(&s, &a.provider, "feathered")?
                .ok_or_else(|| usage("two-stage augmentation needs a provider other than none"))?,
        },
        "end-to-end" => {
            if a.provider.provider.is_some() {
                return Err(usage("--provider only applies to two-stage mode"));
            }
            AugmentMode::EndToEnd
        }
        other => return Err(usage(format!("mode must be two-stage or end-to-end, got {other:?}"))),
    };
    let spec = AugmentSpec {
        manifest,
        out_dir,
        styles_per_image,
        mode,
        selection: styles.map_or(StyleSelection::Random, StyleSelection::Explicit),
        seed: s.get_or(common.seed, "seed", 0)?,
        variants_only: a.variants_only || s.get_or(None, "variants_only", false)?,
    };

    let net = load_checkpoint(&ckpt)?;
    let result = run_augment(&net, &spec)?;
    println!(
        "wrote {} entries to {}",
        result.len(),
        spec.out_dir.join(textstyle::augment::MANIFEST_NAME).display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {}

pub fn gradcheck(common: &Common, _a: GradcheckArgs) -> CmdResult {
    let s = Settings::load(common.config.as_deref(), "gradcheck", &[])?;
    let out: Option<PathBuf> = s.get(common.out.clone(), "out")?;
    let reports = audit_shipped();
    for r in &reports {
        println!(
            "{} {:<24} checked {:>4}  max rel {:.3e}  max abs {:.3e}  tol {:.0e}{}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.checked,
            r.max_rel_error,
            r.max_abs_error,
            r.tolerance,
            r.error.as_deref().map(|e| format!("  ({e})")).unwrap_or_default()
        );
    }
    if let Some(path) = out {
        let text = serde_json::to_string_pretty(&reports).context("serializing the audit report")?;
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    if reports.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(anyhow::anyhow!("gradient audit failed").into())
    }
}
