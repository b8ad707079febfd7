use std::path::Path;

use image::{DynamicImage, ImageError};

use super::annotation::QuadAnnotation;
use super::image::decode;
use crate::error::{Error, Result};

/// Binary per-pixel text mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl TextMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Contract(format!(
                "{height}×{width} mask needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Contract("mask values must be 0 or 1".into()));
        }
        Ok(TextMask { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        TextMask {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(u8::from(f(y, x)));
            }
        }
        TextMask { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }
}

/// Per-pixel text probability in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TextProbMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl TextProbMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Contract(format!(
                "{height}×{width} probability map needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Numeric(format!("probability {v} outside [0, 1]")));
        }
        Ok(TextProbMap { height, width, data })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

impl From<&TextMask> for TextProbMap {
    fn from(m: &TextMask) -> Self {
        TextProbMap {
            height: m.height,
            width: m.width,
            data: m.data.iter().map(|&v| v as f64).collect(),
        }
    }
}

impl TryFrom<&TextProbMap> for TextMask {
    type Error = Error;

    /// Accepts only maps whose every value is exactly 0 or 1.
    fn try_from(p: &TextProbMap) -> Result<Self> {
        if let Some(v) = p.data.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::Contract(format!("mask is not binary: found value {v}")));
        }
        Ok(TextMask {
            height: p.height,
            width: p.width,
            data: p.data.iter().map(|&v| u8::from(v == 1.0)).collect(),
        })
    }
}

/// Marks every pixel whose integer center lies in, or on the boundary of, a
/// care quad. Don't-care quads are skipped.
pub fn rasterize_mask(annots: &[QuadAnnotation], height: usize, width: usize) -> Result<TextMask> {
    if height == 0 || width == 0 {
        return Err(Error::Size(format!("mask must be at least 1×1, got {height}×{width}")));
    }
    let mut mask = TextMask::zeros(height, width);
    for a in annots.iter().filter(|a| a.care) {
        let xs = a.points.map(|p| p.0);
        let ys = a.points.map(|p| p.1);
        let x0 = (*xs.iter().min().unwrap()).max(0);
        let x1 = (*xs.iter().max().unwrap()).min(width as i64 - 1);
        let y0 = (*ys.iter().min().unwrap()).max(0);
        let y1 = (*ys.iter().max().unwrap()).min(height as i64 - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                if a.contains(x, y) {
                    mask.data[y as usize * width + x as usize] = 1;
                }
            }
        }
    }
    Ok(mask)
}

/// Soft mask: `clamp(1 - d / radius, 0, 1)` with `d` the Euclidean distance
/// to the nearest set pixel. A zero radius returns the mask itself.
pub fn feather_mask(mask: &TextMask, radius: f64) -> Result<TextProbMap> {
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(Error::Contract(format!("feather radius must be finite and ≥ 0, got {radius}")));
    }
    if radius == 0.0 {
        return Ok(TextProbMap::from(mask));
    }
    let (h, w) = (mask.height, mask.width);
    let reach = radius.ceil() as isize;
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            if mask.data[y as usize * w + x as usize] == 1 {
                out[y as usize * w + x as usize] = 1.0;
                continue;
            }
            let mut best = f64::INFINITY;
            for yy in (y - reach).max(0)..=(y + reach).min(h as isize - 1) {
                for xx in (x - reach).max(0)..=(x + reach).min(w as isize - 1) {
                    if mask.data[yy as usize * w + xx as usize] == 1 {
                        let d2 = ((yy - y) * (yy - y) + (xx - x) * (xx - x)) as f64;
                        best = best.min(d2);
                    }
                }
            }
            out[y as usize * w + x as usize] = (1.0 - best.sqrt() / radius).clamp(0.0, 1.0);
        }
    }
    TextProbMap::new(h, w, out)
}

/// Reads a single-channel 8-bit heatmap; values are divided by 255.
pub fn load_probmap(path: impl AsRef<Path>) -> Result<TextProbMap> {
    let path = path.as_ref();
    match decode(path)? {
        DynamicImage::ImageLuma8(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            TextProbMap::new(h, w, buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect())
        }
        other => Err(Error::Format(format!(
            "{}: probability maps must be single-channel 8-bit, got {:?}",
            path.display(),
            other.color()
        ))),
    }
}

pub fn save_probmap(map: &TextProbMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = map.data.iter().map(|v| (v * 255.0).round() as u8).collect();
    let buf = image::GrayImage::from_raw(map.width as u32, map.height as u32, bytes).expect("gray buffer size");
    buf.save(path).map_err(|e| match e {
        ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent inclusion test: boundary check plus winding number.
    fn oracle_inside(q: &QuadAnnotation, px: f64, py: f64) -> bool {
        let p = q.points.map(|(x, y)| (x as f64, y as f64));
        for i in 0..4 {
            let (a, b) = (p[i], p[(i + 1) % 4]);
            let cross = (b.0 - a.0) * (py - a.1) - (b.1 - a.1) * (px - a.0);
            let within = px >= a.0.min(b.0) && px <= a.0.max(b.0) && py >= a.1.min(b.1) && py <= a.1.max(b.1);
            if cross == 0.0 && within {
                return true;
            }
        }
        let mut angle = 0.0;
        for i in 0..4 {
            let (a, b) = (p[i], p[(i + 1) % 4]);
            let t1 = (a.1 - py).atan2(a.0 - px);
            let t2 = (b.1 - py).atan2(b.0 - px);
            let mut d = t2 - t1;
            while d > std::f64::consts::PI {
                d -= 2.0 * std::f64::consts::PI;
            }
            while d < -std::f64::consts::PI {
                d += 2.0 * std::f64::consts::PI;
            }
            angle += d;
        }
        angle.abs() > std::f64::consts::PI
    }

    fn oracle_mask(annots: &[QuadAnnotation], h: usize, w: usize) -> Vec<u8> {
        let mut out = vec![0u8; h * w];
        for y in 0..h {
            for x in 0..w {
                if annots.iter().any(|a| a.care && oracle_inside(a, x as f64, y as f64)) {
                    out[y * w + x] = 1;
                }
            }
        }
        out
    }

    #[test]
    fn full_cover_and_empty() {
        let full = QuadAnnotation::new([(0, 0), (5, 0), (5, 3), (0, 3)], "t");
        assert!(rasterize_mask(&[full], 4, 6).unwrap().data().iter().all(|&v| v == 1));
        assert!(rasterize_mask(&[], 4, 4).unwrap().data().iter().all(|&v| v == 0));
    }

    #[test]
    fn axis_aligned_unit_square_sets_four_pixels() {
        let q = QuadAnnotation::new([(1, 1), (2, 1), (2, 2), (1, 2)], "t");
        let m = rasterize_mask(std::slice::from_ref(&q), 4, 4).unwrap();
        let set: Vec<(usize, usize)> = (0..4).flat_map(|y| (0..4).map(move |x| (y, x))).filter(|&(y, x)| m.get(y, x)).collect();
        assert_eq!(set, vec![(1, 1), (1, 2), (2, 1), (2, 2)]);
        assert_eq!(m.data(), oracle_mask(&[q], 4, 4).as_slice());
    }

    #[test]
    fn dont_care_quads_are_ignored() {
        let q = QuadAnnotation::new([(0, 0), (3, 0), (3, 3), (0, 3)], "###");
        assert_eq!(rasterize_mask(&[q], 4, 4).unwrap().count(), 0);
    }

    #[test]
    fn feather_radius_zero_and_full_mask() {
        let m = TextMask::from_fn(4, 5, |y, x| (x + y) % 3 == 0);
        let p = feather_mask(&m, 0.0).unwrap();
        assert!(p.data().iter().zip(m.data()).all(|(a, &b)| *a == b as f64));
        let ones = TextMask::from_fn(3, 3, |_, _| true);
        assert!(feather_mask(&ones, 2.5).unwrap().data().iter().all(|&v| v == 1.0));
        assert!(feather_mask(&m, -1.0).is_err());
    }

    #[test]
    fn feather_single_center_pixel_matches_exhaustive_distance() {
        let m = TextMask::from_fn(5, 5, |y, x| y == 2 && x == 2);
        let p = feather_mask(&m, 2.0).unwrap();
        for y in 0..5 {
            for x in 0..5 {
                let mut d = f64::INFINITY;
                for yy in 0..5 {
                    for xx in 0..5 {
                        if m.get(yy, xx) {
                            let dy = yy as f64 - y as f64;
                            let dx = xx as f64 - x as f64;
                            d = d.min((dy * dy + dx * dx).sqrt());
                        }
                    }
                }
                let expected = (1.0 - d / 2.0).clamp(0.0, 1.0);
                assert!((p.get(y, x) - expected).abs() < 1e-15, "({y},{x})");
            }
        }
        assert_eq!(p.get(2, 3), 0.5);
        assert_eq!(p.get(0, 2), 0.0);
    }

    #[test]
    fn probmap_file_semantics() {
        let dir = tempfile::tempdir().unwrap();
        let zero = dir.path().join("z.png");
        image::GrayImage::new(3, 2).save(&zero).unwrap();
        assert!(load_probmap(&zero).unwrap().data().iter().all(|&v| v == 0.0));
        let full = dir.path().join("f.png");
        image::GrayImage::from_pixel(2, 2, image::Luma([255])).save(&full).unwrap();
        assert!(load_probmap(&full).unwrap().data().iter().all(|&v| v == 1.0));
        let fifth = dir.path().join("p.png");
        image::GrayImage::from_pixel(1, 1, image::Luma([51])).save(&fifth).unwrap();
        assert_eq!(load_probmap(&fifth).unwrap().data(), &[0.2]);
        let rgb = dir.path().join("rgb.png");
        image::RgbImage::new(2, 2).save(&rgb).unwrap();
        assert!(matches!(load_probmap(&rgb), Err(Error::Format(_))));
    }

    fn arb_quad(h: i64, w: i64) -> impl Strategy<Value = QuadAnnotation> {
        prop::array::uniform4((-4..w + 4, -4..h + 4))
            .prop_map(|pts| QuadAnnotation::new(pts, "t"))
            .prop_filter("simple quads only", |q| q.is_simple())
    }

    proptest! {
        #[test]
        fn rasterize_matches_brute_force(
            (h, w) in (1usize..=32, 1usize..=32),
            seeds in prop::collection::vec(any::<u64>(), 1..4),
        ) {
            let quads: Vec<QuadAnnotation> = seeds.iter().map(|s| {
                use rand::{Rng, SeedableRng};
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(*s);
                loop {
                    let pts: [(i64, i64); 4] = std::array::from_fn(|_| {
                        (rng.random_range(-4..w as i64 + 4), rng.random_range(-4..h as i64 + 4))
                    });
                    let q = QuadAnnotation::new(pts, "t");
                    if q.is_simple() { break q; }
                }
            }).collect();
            let m = rasterize_mask(&quads, h, w).unwrap();
            let expected = oracle_mask(&quads, h, w);
            prop_assert_eq!(m.data(), expected.as_slice());
        }

        #[test]
        fn single_quad_matches_brute_force(q in arb_quad(16, 16)) {
            let m = rasterize_mask(std::slice::from_ref(&q), 16, 16).unwrap();
            let expected = oracle_mask(&[q], 16, 16);
            prop_assert_eq!(m.data(), expected.as_slice());
        }

        #[test]
        fn feather_is_monotone_in_radius(
            bits in prop::collection::vec(prop::bool::weighted(0.1), 64),
            r1 in 0.0f64..5.0,
            extra in 0.0f64..5.0,
        ) {
            let m = TextMask::from_fn(8, 8, |y, x| bits[y * 8 + x]);
            let a = feather_mask(&m, r1).unwrap();
            let b = feather_mask(&m, r1 + extra).unwrap();
            for (lo, hi) in a.data().iter().zip(b.data()) {
                prop_assert!(hi >= lo);
            }
        }
    }
}
