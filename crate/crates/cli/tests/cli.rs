use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_textstyle"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn refs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

fn write_rgb(path: &Path, w: u32, h: u32, k: u32) {
    image::RgbImage::from_fn(w, h, |x, y| {
        image::Rgb([
            ((x * 37 + y * 11 + k * 50) % 256) as u8,
            ((x * 5 + y * 29 + k * 90) % 256) as u8,
            ((x * 13 + y * 3 + k * 20) % 256) as u8,
        ])
    })
    .save(path)
    .unwrap();
}

const TINY_INI: &str = "seed = 1
[train-style]
steps = 2
crop = 8
base_width = 4
down_widths = 4
residual_blocks = 0
outer_kernel = 3
";

struct Fixture {
    dir: TempDir,
    config: PathBuf,
    manifest: PathBuf,
    checkpoint: PathBuf,
}

impl Fixture {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

/// Two annotated 12×10 images and a two-style network trained for two steps.
fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    for (i, name) in ["a", "b"].iter().enumerate() {
        write_rgb(&p(&format!("{name}.png")), 12, 10, i as u32);
    }
    std::fs::write(p("a.txt"), "2,2,7,2,7,6,2,6,hello\n").unwrap();
    std::fs::write(p("b.txt"), "1,1,4,1,4,3,1,3,###\n").unwrap();
    write_rgb(&p("s0.png"), 16, 16, 3);
    write_rgb(&p("s1.png"), 16, 16, 4);
    let manifest = p("manifest.json");
    std::fs::write(
        &manifest,
        r#"{"entries": [{"image": "a.png", "annotations": "a.txt"}, {"image": "b.png", "annotations": "b.txt"}]}"#,
    )
    .unwrap();
    let config = p("tiny.ini");
    std::fs::write(&config, TINY_INI).unwrap();
    let checkpoint = p("net.json");
    let styles = format!("{},{}", s(&p("s0.png")), s(&p("s1.png")));
    let o = run(&[
        "train-style",
        "--config",
        s(&config),
        "--style-images",
        &styles,
        "--content-manifest",
        s(&manifest),
        "--out",
        s(&checkpoint),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    Fixture {
        dir,
        config,
        manifest,
        checkpoint,
    }
}

#[test]
fn train_style_writes_checkpoint_and_trace() {
    let f = fixture();
    assert!(f.path("net.bin").exists());
    let csv = std::fs::read_to_string(f.path("net.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "step,phase,loss");
    assert_eq!(lines.len(), 3);
}

#[test]
fn style_index_equals_one_hot_weights() {
    let f = fixture();
    let input = f.path("a.png");
    let (x, y) = (f.path("x.png"), f.path("y.png"));
    let ck = s(&f.checkpoint);
    let o1 = run(&["stylize", "--checkpoint", ck, "--input", s(&input), "--style-index", "1", "--out", s(&x)]);
    let o2 = run(&[
        "stylize",
        "--checkpoint",
        ck,
        "--input",
        s(&input),
        "--style-weights",
        "0,1",
        "--out",
        s(&y),
    ]);
    assert_eq!((code(&o1), code(&o2)), (0, 0));
    assert_eq!(std::fs::read(&x).unwrap(), std::fs::read(&y).unwrap());
    let img = image::open(&x).unwrap();
    assert_eq!((img.width(), img.height()), (12, 10));
}

#[test]
fn selective_stylize_keeps_background_pixels() {
    let f = fixture();
    let out = f.path("sel.png");
    let o = run(&[
        "stylize",
        "--checkpoint",
        s(&f.checkpoint),
        "--input",
        s(&f.path("a.png")),
        "--style-index",
        "0",
        "--provider",
        "feathered",
        "--annotations",
        s(&f.path("a.txt")),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let src = image::open(f.path("a.png")).unwrap().to_rgb8();
    let got = image::open(&out).unwrap().to_rgb8();
    for (x, y, px) in got.enumerate_pixels() {
        let inside = (2..=7).contains(&x) && (2..=6).contains(&y);
        if !inside {
            assert_eq!(px, src.get_pixel(x, y), "pixel ({x},{y})");
        }
    }
}

#[test]
fn blend_with_zero_probmap_reproduces_content() {
    let f = fixture();
    let zero = f.path("zero.png");
    image::GrayImage::new(12, 10).save(&zero).unwrap();
    let out = f.path("blend.png");
    let o = run(&[
        "blend",
        "--content",
        s(&f.path("a.png")),
        "--stylized",
        s(&f.path("b.png")),
        "--probmap",
        s(&zero),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let a = image::open(f.path("a.png")).unwrap().to_rgb8();
    let b = image::open(&out).unwrap().to_rgb8();
    assert_eq!(a.as_raw(), b.as_raw());
}

#[test]
fn flags_override_config_keys() {
    let f = fixture();
    let cfg = f.path("blend.ini");
    std::fs::write(&cfg, "[blend]\nprobability = 1\n").unwrap();
    let (out1, out0) = (f.path("p1.png"), f.path("p0.png"));
    let base = |out: &Path| {
        vec![
            "blend".to_string(),
            "--config".into(),
            s(&cfg).into(),
            "--content".into(),
            s(&f.path("a.png")).into(),
            "--stylized".into(),
            s(&f.path("b.png")).into(),
            "--out".into(),
            s(out).into(),
        ]
    };
    let a1 = base(&out1);
    let mut a0 = base(&out0);
    a0.extend(["--probability".to_string(), "0".into()]);
    assert_eq!(code(&run(&refs(&a1))), 0);
    assert_eq!(code(&run(&refs(&a0))), 0);
    let rgb = |p: PathBuf| image::open(p).unwrap().to_rgb8().into_raw();
    assert_eq!(rgb(out1), rgb(f.path("b.png")));
    assert_eq!(rgb(out0), rgb(f.path("a.png")));
}

#[test]
fn gradcheck_passes_on_shipped_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("audit.json");
    let o = run(&["gradcheck", "--out", s(&report)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 4);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 4);
}

#[test]
fn usage_errors_exit_2() {
    let f = fixture();
    let ck = s(&f.checkpoint);
    let input = f.path("a.png");
    let out = f.path("o.png");
    let both = run(&[
        "stylize",
        "--checkpoint",
        ck,
        "--input",
        s(&input),
        "--style-index",
        "0",
        "--style-weights",
        "1,0",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&both), 2);
    let neither = run(&["stylize", "--checkpoint", ck, "--input", s(&input), "--out", s(&out)]);
    assert_eq!(code(&neither), 2);
    let bad_weights = run(&[
        "stylize",
        "--checkpoint",
        ck,
        "--input",
        s(&input),
        "--style-weights",
        "0.7,0.7",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&bad_weights), 2);
    let no_out = run(&["blend", "--content", s(&input), "--stylized", s(&input), "--probability", "0"]);
    assert_eq!(code(&no_out), 2);
    let unknown_flag = run(&["gradcheck", "--frobnicate"]);
    assert_eq!(code(&unknown_flag), 2);
    let cfg = f.path("typo.ini");
    std::fs::write(&cfg, "stpes = 3\n").unwrap();
    assert_eq!(code(&run(&["gradcheck", "--config", s(&cfg)])), 2);
    assert!(!out.exists());
}

#[test]
fn operation_failures_exit_1() {
    let f = fixture();
    let missing = run(&[
        "stylize",
        "--checkpoint",
        s(&f.path("nope.json")),
        "--input",
        s(&f.path("a.png")),
        "--style-index",
        "0",
        "--out",
        s(&f.path("o.png")),
    ]);
    assert_eq!(code(&missing), 1);
    assert!(!String::from_utf8_lossy(&missing.stderr).is_empty());
    let mismatch = run(&[
        "blend",
        "--content",
        s(&f.path("a.png")),
        "--stylized",
        s(&f.path("s0.png")),
        "--probability",
        "0.5",
        "--out",
        s(&f.path("o.png")),
    ]);
    assert_eq!(code(&mismatch), 1);
    let too_many = run(&[
        "augment",
        "--checkpoint",
        s(&f.checkpoint),
        "--manifest",
        s(&f.manifest),
        "--styles-per-image",
        "3",
        "--out",
        s(&f.path("aug")),
    ]);
    assert_eq!(code(&too_many), 1);
}

#[test]
fn augment_writes_originals_and_variants_deterministically() {
    let f = fixture();
    let go = |out: &Path| {
        run(&[
            "augment",
            "--config",
            s(&f.config),
            "--checkpoint",
            s(&f.checkpoint),
            "--manifest",
            s(&f.manifest),
            "--styles-per-image",
            "2",
            "--out",
            s(out),
        ])
    };
    let (d1, d2) = (f.path("aug1"), f.path("aug2"));
    assert_eq!(code(&go(&d1)), 0);
    assert_eq!(code(&go(&d2)), 0);
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d1.join("manifest.json")).unwrap()).unwrap();
    let entries = m["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 6);
    assert_eq!(m["metadata"]["seed"], 1);
    for e in entries {
        let img = e["image"].as_str().unwrap();
        let ann = e["annotations"].as_str().unwrap();
        let src = if ann.starts_with("annotations/a") { "a.txt" } else { "b.txt" };
        assert_eq!(
            std::fs::read(d1.join(ann)).unwrap(),
            std::fs::read(f.path(src)).unwrap()
        );
        assert_eq!(std::fs::read(d1.join(img)).unwrap(), std::fs::read(d2.join(img)).unwrap());
    }

    let only = f.path("aug3");
    let o = run(&[
        "augment",
        "--checkpoint",
        s(&f.checkpoint),
        "--manifest",
        s(&f.manifest),
        "--styles",
        "1",
        "--mode",
        "end-to-end",
        "--variants-only",
        "--out",
        s(&only),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(only.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["entries"].as_array().unwrap().len(), 2);
    assert!(only.join("images/a_s1.png").exists());
}

#[test]
fn train_distill_writes_student() {
    let f = fixture();
    let cfg = f.path("distill.ini");
    std::fs::write(&cfg, "[train-distill]\nphase1_epochs = 1\nphase2_epochs = 1\nstyle_index = 1\n").unwrap();
    let out = f.path("student.json");
    let o = run(&[
        "train-distill",
        "--config",
        s(&cfg),
        "--checkpoint",
        s(&f.checkpoint),
        "--manifest",
        s(&f.manifest),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(m["metadata"]["style_weights"], serde_json::json!([0.0, 1.0]));
    let csv = std::fs::read_to_string(f.path("student.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
    let styl = f.path("st.png");
    let o = run(&[
        "stylize",
        "--checkpoint",
        s(&out),
        "--input",
        s(&f.path("b.png")),
        "--style-index",
        "1",
        "--out",
        s(&styl),
    ]);
    assert_eq!(code(&o), 0);
}
