//! ICDAR-style ground truth: one quadrilateral per line.

use std::path::Path;

use crate::error::{Error, Result};

/// Transcription marking a region whose text is illegible.
pub const DONT_CARE: &str = "###";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AnnotationFormat {
    /// `x1,y1,x2,y2,x3,y3,x4,y4,transcription` (ICDAR 2015).
    #[default]
    Quad,
    /// `left,top,right,bottom,transcription`, comma or whitespace separated,
    /// optionally with a quoted transcription (ICDAR 2013).
    Box,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuadAnnotation {
    pub points: [(i64, i64); 4],
    pub transcription: String,
    pub care: bool,
}

impl QuadAnnotation {
    pub fn new(points: [(i64, i64); 4], transcription: impl Into<String>) -> Self {
        let transcription = transcription.into();
        let care = transcription != DONT_CARE;
        QuadAnnotation {
            points,
            transcription,
            care,
        }
    }

    /// Copy with every vertex clamped into a `width`×`height` raster.
    pub fn clamped(&self, width: usize, height: usize) -> Self {
        let mut out = self.clone();
        for p in &mut out.points {
            p.0 = p.0.clamp(0, width.max(1) as i64 - 1);
            p.1 = p.1.clamp(0, height.max(1) as i64 - 1);
        }
        out
    }

    /// Four distinct vertices and no crossing between opposite edges.
    pub fn is_simple(&self) -> bool {
        let p = &self.points;
        for i in 0..4 {
            for j in i + 1..4 {
                if p[i] == p[j] {
                    return false;
                }
            }
        }
        !segments_cross(p[0], p[1], p[2], p[3]) && !segments_cross(p[1], p[2], p[3], p[0])
    }

    /// Point-in-quad with the boundary counted as inside. Exact for integer points.
    pub fn contains(&self, x: i64, y: i64) -> bool {
        let p = &self.points;
        let mut inside = false;
        for i in 0..4 {
            let a = p[i];
            let b = p[(i + 1) % 4];
            if on_segment(a, b, (x, y)) {
                return true;
            }
            // half-open crossing rule on the horizontal ray to +x
            if (a.1 > y) != (b.1 > y) {
                let lhs = (x - a.0) * (b.1 - a.1);
                let rhs = (y - a.1) * (b.0 - a.0);
                // x < a.x + (y - a.y)(b.x - a.x)/(b.y - a.y), sign-aware
                if (b.1 > a.1 && lhs < rhs) || (b.1 < a.1 && lhs > rhs) {
                    inside = !inside;
                }
            }
        }
        inside
    }
}

fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn on_segment(a: (i64, i64), b: (i64, i64), p: (i64, i64)) -> bool {
    cross(a, b, p) == 0 && p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1)
}

fn segments_cross(a: (i64, i64), b: (i64, i64), c: (i64, i64), d: (i64, i64)) -> bool {
    let d1 = cross(c, d, a).signum();
    let d2 = cross(c, d, b).signum();
    let d3 = cross(a, b, c).signum();
    let d4 = cross(a, b, d).signum();
    if d1 * d2 < 0 && d3 * d4 < 0 {
        return true;
    }
    on_segment(c, d, a) || on_segment(c, d, b) || on_segment(a, b, c) || on_segment(a, b, d)
}

fn parse_coord(field: &str, line: usize) -> Result<i64> {
    field.trim().parse::<i64>().map_err(|_| Error::Parse {
        line,
        message: format!("coordinate {:?} is not an integer", field.trim()),
    })
}

/// Parses the 8-coordinate form.
pub fn parse_icdar_annotations(text: &str) -> Result<Vec<QuadAnnotation>> {
    parse_annotations(text, AnnotationFormat::Quad)
}

pub fn parse_annotations(text: &str, format: AnnotationFormat) -> Result<Vec<QuadAnnotation>> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut out = Vec::new();
    for (i, raw) in text.split('\n').enumerate() {
        let line_no = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            continue;
        }
        out.push(match format {
            AnnotationFormat::Quad => parse_quad_line(line, line_no)?,
            AnnotationFormat::Box => parse_box_line(line, line_no)?,
        });
    }
    Ok(out)
}

fn parse_quad_line(line: &str, line_no: usize) -> Result<QuadAnnotation> {
    let fields: Vec<&str> = line.splitn(9, ',').collect();
    if fields.len() < 9 {
        return Err(Error::Parse {
            line: line_no,
            message: format!("expected 9 comma-separated fields, found {}", fields.len()),
        });
    }
    let mut c = [0i64; 8];
    for (k, f) in fields[..8].iter().enumerate() {
        c[k] = parse_coord(f, line_no)?;
    }
    let points = [(c[0], c[1]), (c[2], c[3]), (c[4], c[5]), (c[6], c[7])];
    Ok(QuadAnnotation::new(points, fields[8]))
}

fn parse_box_line(line: &str, line_no: usize) -> Result<QuadAnnotation> {
    let sep = |ch: char| ch == ',' || ch.is_whitespace();
    let mut rest = line.trim_start();
    let mut c = [0i64; 4];
    for (k, slot) in c.iter_mut().enumerate() {
        let end = rest.find(sep).ok_or_else(|| Error::Parse {
            line: line_no,
            message: format!("expected 5 fields, found {}", k + usize::from(!rest.is_empty())),
        })?;
        *slot = parse_coord(&rest[..end], line_no)?;
        rest = rest[end..].trim_start_matches(sep);
    }
    let mut transcription = rest.trim_end();
    if transcription.len() >= 2 && transcription.starts_with('"') && transcription.ends_with('"') {
        transcription = &transcription[1..transcription.len() - 1];
    }
    let [l, t, r, b] = c;
    Ok(QuadAnnotation::new([(l, t), (r, t), (r, b), (l, b)], transcription))
}

/// Writes the 8-coordinate form, `\n` line endings, no BOM.
pub fn serialize_annotations(annots: &[QuadAnnotation]) -> String {
    let mut s = String::new();
    for a in annots {
        for (x, y) in a.points {
            s.push_str(&format!("{x},{y},"));
        }
        s.push_str(&a.transcription);
        s.push('\n');
    }
    s
}

pub fn load_annotations(path: impl AsRef<Path>, format: AnnotationFormat) -> Result<Vec<QuadAnnotation>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, format)
}
