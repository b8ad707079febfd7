//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use textstyle::augment::{augment, AugmentMode, AugmentSpec, StyleSelection, MANIFEST_NAME};
use textstyle::autograd::{Graph, Reduction};
use textstyle::data::{
    load_image, rasterize_mask, save_image, DatasetManifest, Image, ManifestEntry, QuadAnnotation, TextMask,
    TextProbMap,
};
use textstyle::distill::{distill_loss, make_targets, train_student_on, DistillSample, DistillSchedule, DistillWeights};
use textstyle::optim::AdamConfig;
use textstyle::perceptual::gram;
use textstyle::selective::{blend, ProbMapProvider};
use textstyle::style_net::{cond_instance_norm, mix_styles, Conditioning, NetworkConfig, StyleNetwork, StyleWeights};
use textstyle::tensor::Tensor;
use textstyle::trainer::{
    audit_shipped, load_checkpoint, save_checkpoint, train_baseline_on, AuditKind, TrainConfig,
};
use textstyle::Error;

const ORACLE_TOL: f64 = 1e-12;
const ORACLE_CASES: usize = 120;
const TOTAL_AUDIT_TOL: f64 = 1e-4;
const DISTILL_AUDIT_TOL: f64 = 1e-6;
const BLEND_TOL: f64 = 1e-7;
const OVERFIT_TARGET: f64 = 1e-3;
const OVERFIT_MAX_STEPS: usize = 2000;
const OVERFIT_LR: f64 = 1e-3;
const BASELINE_STEPS: usize = 500;
const BASELINE_RATIO: f64 = 0.5;
const BASELINE_LR: f64 = 1e-2;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn rand_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    Image::new(h, w, (0..h * w * 3).map(|_| rng.random::<f64>()).collect()).unwrap()
}

fn rand_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> TextMask {
    TextMask::new(h, w, (0..h * w).map(|_| rng.random_range(0..=1u8)).collect()).unwrap()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn oracle_gram(f: &[f64], c: usize, hw: usize, divisor: f64) -> Vec<f64> {
    let mut g = vec![0.0; c * c];
    for i in 0..c {
        for j in 0..c {
            let mut s = 0.0;
            for k in 0..hw {
                s += f[i * hw + k] * f[j * hw + k];
            }
            g[i * c + j] = s / divisor;
        }
    }
    g
}

fn oracle_cin(x: &[f64], c: usize, hw: usize, scale: &[f64], shift: &[f64], eps: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for ch in 0..c {
        let vals = &x[ch * hw..(ch + 1) * hw];
        let mut mean = 0.0;
        for v in vals {
            mean += v;
        }
        mean /= hw as f64;
        let mut var = 0.0;
        for v in vals {
            var += (v - mean) * (v - mean);
        }
        var /= hw as f64;
        for k in 0..hw {
            out[ch * hw + k] = (vals[k] - mean) / (var + eps).sqrt() * scale[ch] + shift[ch];
        }
    }
    out
}

/// Boundary test plus winding number around the pixel center.
fn oracle_inside(q: &[(i64, i64); 4], px: f64, py: f64) -> bool {
    let p = q.map(|(x, y)| (x as f64, y as f64));
    for i in 0..4 {
        let (a, b) = (p[i], p[(i + 1) % 4]);
        let cross = (b.0 - a.0) * (py - a.1) - (b.1 - a.1) * (px - a.0);
        let within = px >= a.0.min(b.0) && px <= a.0.max(b.0) && py >= a.1.min(b.1) && py <= a.1.max(b.1);
        if cross == 0.0 && within {
            return true;
        }
    }
    let mut total = 0.0;
    for i in 0..4 {
        let (a, b) = (p[i], p[(i + 1) % 4]);
        let mut d = (b.1 - py).atan2(b.0 - px) - (a.1 - py).atan2(a.0 - px);
        if d > std::f64::consts::PI {
            d -= 2.0 * std::f64::consts::PI;
        }
        if d < -std::f64::consts::PI {
            d += 2.0 * std::f64::consts::PI;
        }
        total += d;
    }
    total.abs() > std::f64::consts::PI
}

/// Four distinct points ordered by angle around their centroid.
fn star_quad(rng: &mut ChaCha8Rng, h: usize, w: usize) -> [(i64, i64); 4] {
    loop {
        let mut pts: Vec<(i64, i64)> = (0..4)
            .map(|_| (rng.random_range(-3..w as i64 + 3), rng.random_range(-3..h as i64 + 3)))
            .collect();
        let cx = pts.iter().map(|p| p.0 as f64).sum::<f64>() / 4.0;
        let cy = pts.iter().map(|p| p.1 as f64).sum::<f64>() / 4.0;
        pts.sort_by(|a, b| {
            let ta = (a.1 as f64 - cy).atan2(a.0 as f64 - cx);
            let tb = (b.1 as f64 - cy).atan2(b.0 as f64 - cx);
            ta.partial_cmp(&tb).unwrap()
        });
        let q = [pts[0], pts[1], pts[2], pts[3]];
        if QuadAnnotation::new(q, "t").is_simple() {
            return q;
        }
    }
}

fn criterion_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = [0.0f64; 4];
    let mut raster_mismatch = 0usize;
    for _ in 0..ORACLE_CASES {
        let (c, h, w) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..5));
        let data: Vec<f64> = (0..c * h * w).map(|_| rng.random_range(-2.0..2.0)).collect();
        let t = Tensor::new(vec![c, h, w], data.clone()).unwrap();
        for normalize in [true, false] {
            let g = gram(&t, normalize).unwrap();
            let div = if normalize { (c * h * w) as f64 } else { 1.0 };
            worst[0] = worst[0].max(max_diff(g.as_tensor().data(), &oracle_gram(&data, c, h * w, div)));
        }

        let scale: Vec<f64> = (0..c).map(|_| rng.random_range(-2.0..2.0)).collect();
        let shift: Vec<f64> = (0..c).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y = cond_instance_norm(&t, &scale, &shift, 1e-5).unwrap();
        worst[1] = worst[1].max(max_diff(y.data(), &oracle_cin(&data, c, h * w, &scale, &shift, 1e-5)));

        let ci = rand_image(&mut rng, h, w);
        let pi = rand_image(&mut rng, h, w);
        let qi = rand_image(&mut rng, h, w);
        let m = rand_mask(&mut rng, h, w);
        let targets = make_targets(&ci, &pi, &m).unwrap();
        let mut want_s = Vec::new();
        let mut want_c = Vec::new();
        for yy in 0..h {
            for xx in 0..w {
                let mv = m.data()[yy * w + xx] as f64;
                for ch in 0..3 {
                    want_s.push(pi.get(yy, xx, ch) * mv);
                    want_c.push(ci.get(yy, xx, ch) * (1.0 - mv));
                }
            }
        }
        worst[2] = worst[2].max(max_diff(targets.theta_s.data(), &want_s));
        worst[2] = worst[2].max(max_diff(targets.theta_c.data(), &want_c));

        let lw = DistillWeights::new(rng.random_range(0.0..100.0), rng.random_range(0.0..10.0)).unwrap();
        for reduction in [Reduction::Mean, Reduction::Sum] {
            let got = distill_loss(&qi, &targets, &m, lw, reduction).unwrap();
            let (mut a, mut b) = (0.0, 0.0);
            for yy in 0..h {
                for xx in 0..w {
                    let mv = m.data()[yy * w + xx] as f64;
                    for ch in 0..3 {
                        let i = (yy * w + xx) * 3 + ch;
                        let da = qi.get(yy, xx, ch) * mv - want_s[i];
                        let db = qi.get(yy, xx, ch) * (1.0 - mv) - want_c[i];
                        a += da * da;
                        b += db * db;
                    }
                }
            }
            let n = if reduction == Reduction::Mean { (3 * h * w) as f64 } else { 1.0 };
            let want = lw.text * a / n + lw.background * b / n;
            worst[3] = worst[3].max((got - want).abs() / want.abs().max(1.0));
        }

        let (mh, mw) = (rng.random_range(1..24), rng.random_range(1..24));
        let quads: Vec<[(i64, i64); 4]> = (0..rng.random_range(1..4)).map(|_| star_quad(&mut rng, mh, mw)).collect();
        let annots: Vec<QuadAnnotation> = quads.iter().map(|q| QuadAnnotation::new(*q, "t")).collect();
        let mask = rasterize_mask(&annots, mh, mw).unwrap();
        for yy in 0..mh {
            for xx in 0..mw {
                let want = quads.iter().any(|q| oracle_inside(q, xx as f64, yy as f64));
                if mask.get(yy, xx) != want {
                    raster_mismatch += 1;
                }
            }
        }
    }
    let passed = worst.iter().all(|&e| e <= ORACLE_TOL) && raster_mismatch == 0;
    outcome(
        passed,
        format!(
            "{ORACLE_CASES} cases; max |err| gram {:.1e}, cin {:.1e}, targets {:.1e}, distill_loss {:.1e} (tol {ORACLE_TOL:.0e}); rasterize mismatches {raster_mismatch}",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

fn criterion_grad_audits() -> Outcome {
    let reports = audit_shipped();
    let mut passed = true;
    let mut parts = Vec::new();
    for r in &reports {
        let tol = match r.kind {
            AuditKind::Total => TOTAL_AUDIT_TOL,
            AuditKind::Distill => DISTILL_AUDIT_TOL,
        };
        passed &= r.passed && r.max_rel_error < tol;
        parts.push(format!("{} {:.2e} (< {tol:.0e})", r.name, r.max_rel_error));
    }
    outcome(passed, parts.join(", "))
}

fn criterion_blend() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut exact = true;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (h, w) = (rng.random_range(1..9), rng.random_range(1..9));
        let c = rand_image(&mut rng, h, w);
        let p = rand_image(&mut rng, h, w);
        let bits = |i: &Image| i.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        exact &= bits(&blend(&c, &p, &TextProbMap::constant(h, w, 0.0).unwrap()).unwrap()) == bits(&c);
        exact &= bits(&blend(&c, &p, &TextProbMap::constant(h, w, 1.0).unwrap()).unwrap()) == bits(&p);
        let pt = TextProbMap::new(h, w, (0..h * w).map(|_| rng.random::<f64>()).collect()).unwrap();
        let out = blend(&c, &p, &pt).unwrap();
        for y in 0..h {
            for x in 0..w {
                for ch in 0..3 {
                    let want = c.get(y, x, ch) + pt.get(y, x) * (p.get(y, x, ch) - c.get(y, x, ch));
                    worst = worst.max((out.get(y, x, ch) - want).abs());
                }
            }
        }
    }
    outcome(
        exact && worst < BLEND_TOL,
        format!("endpoints bit-exact: {exact}; max |blend − (c + P(p − c))| {worst:.1e} (tol {BLEND_TOL:.0e})"),
    )
}

fn criterion_distill_overfit() -> Outcome {
    let teacher = StyleNetwork::new(NetworkConfig::default().with_seed(7)).unwrap();
    let before = teacher.fingerprint();
    let content = Image::from_fn(16, 16, |y, x, c| {
        0.2 + 0.6 * (0.5 + 0.5 * ((y as f64 * 0.7 + x as f64 * 0.4 + c as f64 * 1.3).sin()))
    })
    .unwrap();
    let mask = TextMask::from_fn(16, 16, |y, x| (y + x) % 2 == 0);
    let samples = [DistillSample::new(content, mask).unwrap()];
    let schedule = DistillSchedule {
        optimizer: AdamConfig::default().with_lr(OVERFIT_LR),
        seed: 1,
        cache_teacher: true,
        ..DistillSchedule::single(OVERFIT_MAX_STEPS, DistillWeights::new(2.0, 1.0).unwrap())
    };
    let start = Instant::now();
    let w = StyleWeights::one_hot(1, 0).unwrap();
    let out = match train_student_on(&teacher, &samples, &schedule, &w) {
        Ok(o) => o,
        Err(e) => return outcome(false, format!("training failed: {e}")),
    };
    let elapsed = start.elapsed();
    let reached = out.trace.entries().iter().find(|e| e.loss < OVERFIT_TARGET).map(|e| e.step + 1);
    let final_loss = out.trace.last_loss().unwrap_or(f64::NAN);
    let untouched = teacher.fingerprint() == before;
    outcome(
        reached.is_some() && untouched && elapsed < Duration::from_secs(300),
        format!(
            "first step below {OVERFIT_TARGET:.0e}: {reached:?} of ≤ {OVERFIT_MAX_STEPS}; initial {:.3e}, final {final_loss:.3e}; teacher untouched: {untouched}; {:.1}s",
            out.trace.entries()[0].loss,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_baseline_progress() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let contents: Vec<Image> = (0..32)
        .map(|_| {
            let (a, b, ph) = (rng.random_range(0.2..1.2), rng.random_range(0.2..1.2), rng.random_range(0.0..6.0));
            let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.2..0.8));
            Image::from_fn(16, 16, |y, x, c| {
                (base[c] + 0.3 * ((y as f64 * a + x as f64 * b + ph + c as f64).sin())).clamp(0.0, 1.0)
            })
            .unwrap()
        })
        .collect();
    let styles = [
        Image::from_fn(16, 16, |y, _, c| if (y / 2) % 2 == 0 { [0.9, 0.1, 0.1][c] } else { [0.1, 0.1, 0.9][c] }).unwrap(),
        Image::from_fn(16, 16, |y, x, c| if (x / 3 + y / 3) % 2 == 0 { [0.1, 0.8, 0.2][c] } else { [0.95, 0.9, 0.1][c] })
            .unwrap(),
    ];
    let config = TrainConfig {
        steps: BASELINE_STEPS,
        batch_size: 1,
        optimizer: AdamConfig::default().with_lr(BASELINE_LR),
        crop: 16,
        seed: 3,
        network: NetworkConfig::default().with_styles(2).with_seed(3),
        ..Default::default()
    };
    let start = Instant::now();
    let out = match train_baseline_on(&config, &contents, &styles) {
        Ok(o) => o,
        Err(e) => return outcome(false, format!("training failed: {e}")),
    };
    let elapsed = start.elapsed();
    let decile = BASELINE_STEPS / 10;
    let mean = |s: &[textstyle::trainer::BaselineStep]| s.iter().map(|e| e.style_loss).sum::<f64>() / s.len() as f64;
    let first = mean(&out.steps[..decile]);
    let last = mean(&out.steps[BASELINE_STEPS - decile..]);
    let ratio = last / first;
    outcome(
        ratio <= BASELINE_RATIO && out.gram_computations == 2 && elapsed < Duration::from_secs(600),
        format!(
            "mean style loss first decile {first:.4e}, last decile {last:.4e}, ratio {ratio:.3} (≤ {BASELINE_RATIO}); style Gram sets computed {}; {:.1}s",
            out.gram_computations,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_style_isolation() -> Outcome {
    let mut net = StyleNetwork::new(NetworkConfig::default().with_styles(4).with_seed(8)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for l in 0..net.bank().layers() {
        for v in net.bank_mut().scales_mut(l) {
            *v = rng.random_range(0.5..1.5);
        }
        for v in net.bank_mut().shifts_mut(l) {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    let img = rand_image(&mut rng, 16, 16);
    let n_conv = net.params().len() - 2 * net.bank().layers();
    let layers = net.bank().layers();

    let mut zero_unused = true;
    let mut used_nonzero = true;
    let mut bit_exact = true;
    for k in 0..4 {
        let w = StyleWeights::one_hot(4, k).unwrap();
        let mut g = Graph::new();
        let x = g.constant(img.to_tensor());
        let rec = net.record(&mut g, x, Conditioning::Mix(&w), true).unwrap();
        let target = Tensor::full(&[3, 16, 16], 0.25);
        let loss = g.squared_error(rec.output, &target, Reduction::Mean);
        let mut grads = g.backward(loss);
        let all = rec.collect(&net, &mut grads);
        for (l, grad) in all[n_conv..].iter().enumerate() {
            let c = net.bank().channels(l % layers);
            for (s, row) in grad.chunks(c).enumerate() {
                if s == k {
                    used_nonzero &= row.iter().any(|&v| v != 0.0);
                } else {
                    zero_unused &= row.iter().all(|&v| v == 0.0);
                }
            }
        }
        let rows: Vec<_> = (0..layers).map(|l| net.bank().rows(l, k)).collect();
        bit_exact &= net.forward(&img, &w).unwrap() == net.forward_with_rows(&img, &rows).unwrap();
    }
    let mixed = StyleWeights::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let rows = mix_styles(net.bank(), &mixed).unwrap();
    let mix_exact = net.forward(&img, &mixed).unwrap() == net.forward_with_rows(&img, &rows).unwrap();
    outcome(
        zero_unused && used_nonzero && bit_exact && mix_exact,
        format!(
            "unused-style gradients exactly zero: {zero_unused}; active style receives gradient: {used_nonzero}; one-hot forward = row forward bit-exact: {bit_exact}; mixed forward = mixed-row forward bit-exact: {mix_exact}"
        ),
    )
}

fn write_dataset(dir: &Path, n: usize) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut entries = Vec::new();
    for i in 0..n {
        let (h, w) = (rng.random_range(20..30), rng.random_range(24..36));
        let img = Image::from_fn(h, w, |y, x, c| ((y * 7 + x * 13 + c * 29 + i * 3) % 64) as f64 / 63.0).unwrap();
        let name = format!("img_{i}.png");
        save_image(&img, dir.join(&name)).unwrap();
        let x0 = rng.random_range(0..8i64);
        let y0 = rng.random_range(0..8i64);
        let text = format!(
            "{},{},{},{},{},{},{},{},Word{i}\r\n{},{},{},{},{},{},{},{},###\r\n",
            x0,
            y0,
            x0 + 12,
            y0 + 1,
            x0 + 11,
            y0 + 8,
            x0 - 1,
            y0 + 7,
            w as i64 - 6,
            h as i64 - 6,
            w as i64 - 1,
            h as i64 - 6,
            w as i64 - 1,
            h as i64 - 1,
            w as i64 - 6,
            h as i64 - 1
        );
        let ann = format!("gt_img_{i}.txt");
        std::fs::write(dir.join(&ann), text).unwrap();
        entries.push(ManifestEntry {
            image: name.into(),
            annotations: ann.into(),
            probmap: None,
            provenance: None,
        });
    }
    let path = dir.join("input.json");
    DatasetManifest::new(dir, entries).save(&path).unwrap();
    path
}

fn dir_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn criterion_augmentation() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let input = write_dataset(tmp.path(), 10);
    let net = StyleNetwork::new(NetworkConfig::default().with_styles(6).with_seed(4)).unwrap();
    let spec = |out: &str| AugmentSpec {
        manifest: input.clone(),
        out_dir: tmp.path().join(out),
        styles_per_image: 4,
        mode: AugmentMode::TwoStage {
            provider: ProbMapProvider::Feathered { radius: 0.0 },
        },
        selection: StyleSelection::Random,
        seed: 42,
        variants_only: false,
    };
    let start = Instant::now();
    let manifest = match augment(&net, &spec("run1")) {
        Ok(m) => m,
        Err(e) => return outcome(false, format!("augmentation failed: {e}")),
    };
    let reloaded = DatasetManifest::load(tmp.path().join("run1").join(MANIFEST_NAME)).unwrap();
    let pairs = reloaded.len();
    let annotation_files = reloaded
        .entries
        .iter()
        .filter(|e| reloaded.resolve(&e.annotations).is_file())
        .count();

    let mut annotations_equal = true;
    let mut background_exact = true;
    let mut stylized_somewhere = false;
    for e in &reloaded.entries {
        let prov = e.provenance.as_ref().unwrap();
        let src_entry = DatasetManifest::load(&input)
            .unwrap()
            .entries
            .into_iter()
            .find(|s| s.image == prov.source)
            .unwrap();
        let src_ann = std::fs::read(tmp.path().join(&src_entry.annotations)).unwrap();
        annotations_equal &= std::fs::read(reloaded.resolve(&e.annotations)).unwrap() == src_ann;
        let source = load_image(tmp.path().join(&prov.source)).unwrap();
        let produced = load_image(reloaded.resolve(&e.image)).unwrap();
        let quads = reloaded.load_annotations(e).unwrap();
        let mask = rasterize_mask(&quads, source.height(), source.width()).unwrap();
        for y in 0..source.height() {
            for x in 0..source.width() {
                for c in 0..3 {
                    let same = produced.get(y, x, c).to_bits() == source.get(y, x, c).to_bits();
                    if mask.get(y, x) {
                        stylized_somewhere |= !same;
                    } else {
                        background_exact &= same;
                    }
                }
            }
        }
    }
    let rerun_identical = match augment(&net, &spec("run2")) {
        Ok(_) => dir_bytes(&tmp.path().join("run1")) == dir_bytes(&tmp.path().join("run2")),
        Err(_) => false,
    };
    let elapsed = start.elapsed();
    outcome(
        pairs == 50
            && manifest.len() == 50
            && annotation_files == 50
            && annotations_equal
            && background_exact
            && stylized_somewhere
            && rerun_identical
            && elapsed < Duration::from_secs(120),
        format!(
            "{pairs} image/annotation pairs (50 expected); annotations byte-identical: {annotations_equal}; non-text pixels bit-identical: {background_exact}; text pixels changed: {stylized_somewhere}; rerun byte-identical: {rerun_identical}; {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_checkpoint() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("net.json");
    let net = StyleNetwork::new(NetworkConfig::default().with_styles(3).with_seed(12)).unwrap();
    save_checkpoint(&net, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    let lossless = back.config() == net.config()
        && back.params().len() == net.params().len()
        && back.params().iter().zip(net.params()).all(|(a, b)| {
            a.name == b.name
                && a.shape == b.shape
                && a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits())
        });

    let small_cfg = NetworkConfig {
        base_width: 2,
        down_widths: vec![2],
        residual_blocks: 1,
        up_widths: vec![2],
        outer_kernel: 3,
        ..Default::default()
    }
    .with_styles(2);
    let small = StyleNetwork::new(small_cfg).unwrap();
    let spath = tmp.path().join("small.json");
    save_checkpoint(&small, &spath).unwrap();
    let blob_path = tmp.path().join("small.bin");
    let blob = std::fs::read(&blob_path).unwrap();
    let mut flips_detected = 0;
    for i in 0..blob.len() {
        let mut b = blob.clone();
        b[i] ^= 0x80;
        std::fs::write(&blob_path, &b).unwrap();
        if matches!(load_checkpoint(&spath), Err(Error::Integrity(_))) {
            flips_detected += 1;
        }
    }
    let mut truncations_detected = 0;
    for len in 0..blob.len() {
        std::fs::write(&blob_path, &blob[..len]).unwrap();
        if matches!(load_checkpoint(&spath), Err(Error::Integrity(_))) {
            truncations_detected += 1;
        }
    }
    std::fs::write(&blob_path, &blob).unwrap();
    let restored = load_checkpoint(&spath).map(|n| n == small).unwrap_or(false);

    let text = std::fs::read_to_string(&spath).unwrap();
    let mut m: serde_json::Value = serde_json::from_str(&text).unwrap();
    m["version"] = serde_json::json!(99);
    std::fs::write(&spath, m.to_string()).unwrap();
    let incompatible = matches!(load_checkpoint(&spath), Err(Error::Incompatible(_)));

    outcome(
        lossless && flips_detected == blob.len() && truncations_detected == blob.len() && restored && incompatible,
        format!(
            "round trip bit-exact over {} tensors: {lossless}; byte flips detected {flips_detected}/{n}; truncations detected {truncations_detected}/{n}; future version rejected: {incompatible}",
            net.params().len(),
            n = blob.len()
        ),
    )
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("oracle equivalence", criterion_oracles),
        ("gradient audits", criterion_grad_audits),
        ("blend identities", criterion_blend),
        ("distillation overfit", criterion_distill_overfit),
        ("baseline training progress", criterion_baseline_progress),
        ("style isolation and interpolation", criterion_style_isolation),
        ("augmentation contract", criterion_augmentation),
        ("checkpoint round trip and corruption", criterion_checkpoint),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        println!(
            "acceptance {} {name}: {} [{:.1}s] {}",
            i + 1,
            if o.passed { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
        if !o.passed {
            failures += 1;
        }
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
