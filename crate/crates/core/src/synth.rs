//! Synthetic scenes with known ground truth, and noisy unaries derived from
//! them.
//!
//! A scene is a background plus a stack of filled rectangles and disks. Each
//! shape carries a class label, a fill colour and a per-channel Gaussian
//! colour jitter. Later shapes occlude earlier ones.
//!
//! Randomness comes from a ChaCha8 generator seeded with the scene seed.
//! Stream 0 drives colour jitter: three standard normals per pixel, row-major,
//! drawn whether or not the pixel is covered. Stream 1 drives logit noise:
//! one standard normal per (pixel, label), row-major with labels innermost.
//!
//! The text format is one `key = value` per line, `#` starts a comment and
//! `shape` may repeat:
//!
//! ```text
//! height = 48
//! width = 64
//! labels = 3
//! background = 20,20,20
//! blur = 3
//! noise = 1.5
//! seed = 7
//! shape = rect 1 4 4 30 20 200,40,40 6     # label x0 y0 x1 y1 colour jitter
//! shape = disk 2 40 24 10 40,40,220 6      # label cx cy radius colour jitter
//! ```
//!
//! Rectangles cover `x0 <= x < x1`, `y0 <= y < y1`. Disks cover pixel centres
//! with `(x-cx)² + (y-cy)² <= radius²` and must lie fully inside the image.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::densecrf::{unary_from_probs, UnaryField, DEFAULT_EPSILON};
use crate::error::{Error, Result};
use crate::types::{FeatureMap, LabelMap, RgbImage, IGNORE_LABEL};

const JITTER_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Geometry {
    /// Half-open box `[x0, x1) × [y0, y1)`.
    Rect {
        x0: usize,
        y0: usize,
        x1: usize,
        y1: usize,
    },
    Disk {
        cx: f64,
        cy: f64,
        radius: f64,
    },
}

impl Geometry {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        match *self {
            Geometry::Rect { x0, y0, x1, y1 } => (x0..x1).contains(&x) && (y0..y1).contains(&y),
            Geometry::Disk { cx, cy, radius } => {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                dx * dx + dy * dy <= radius * radius
            }
        }
    }

    fn fits(&self, height: usize, width: usize) -> bool {
        match *self {
            Geometry::Rect { x0, y0, x1, y1 } => x0 < x1 && y0 < y1 && x1 <= width && y1 <= height,
            Geometry::Disk { cx, cy, radius } => {
                radius >= 0.0
                    && cx - radius >= 0.0
                    && cy - radius >= 0.0
                    && cx + radius <= (width - 1) as f64
                    && cy + radius <= (height - 1) as f64
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Shape {
    pub label: u8,
    pub geometry: Geometry,
    pub color: [u8; 3],
    /// Standard deviation of the per-channel colour noise.
    pub jitter: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    /// Number of classes; background is class 0.
    pub labels: usize,
    pub background: [u8; 3],
    pub shapes: Vec<Shape>,
    /// Box-blur radius applied to one-hot logits.
    pub blur: usize,
    /// Standard deviation of the additive logit noise.
    pub noise: f64,
    pub seed: u64,
}

impl SceneSpec {
    /// An empty scene: background only, no corruption.
    pub fn new(height: usize, width: usize, labels: usize) -> Self {
        Self {
            height,
            width,
            labels,
            background: [0, 0, 0],
            shapes: Vec::new(),
            blur: 0,
            noise: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Validation("scene must be at least 1x1".into()));
        }
        if self.labels < 2 || self.labels > IGNORE_LABEL as usize {
            return Err(Error::Validation(format!(
                "labels must be in 2..=255, got {}",
                self.labels
            )));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::Validation("noise must be non-negative".into()));
        }
        for (i, s) in self.shapes.iter().enumerate() {
            if s.label as usize >= self.labels {
                return Err(Error::Validation(format!(
                    "shape {i}: label {} not below {}",
                    s.label, self.labels
                )));
            }
            if !s.geometry.fits(self.height, self.width) {
                return Err(Error::Validation(format!(
                    "shape {i}: geometry leaves the image"
                )));
            }
            if !(s.jitter.is_finite() && s.jitter >= 0.0) {
                return Err(Error::Validation(format!(
                    "shape {i}: jitter must be non-negative"
                )));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = SceneSpec::new(0, 0, 0);
        let mut labels = None;
        let mut seen = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| Error::Validation(format!("line {}: {what}", n + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad("expected key = value"))?;
            let (key, value) = (key.trim(), value.trim());
            if key != "shape" {
                if seen.contains(&key.to_string()) {
                    return Err(bad(&format!("duplicate key `{key}`")));
                }
                seen.push(key.to_string());
            }
            let int = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| bad(&format!("`{key}` needs an integer")))
            };
            match key {
                "height" => spec.height = int(value)?,
                "width" => spec.width = int(value)?,
                "labels" => labels = Some(int(value)?),
                "blur" => spec.blur = int(value)?,
                "seed" => spec.seed = value.parse().map_err(|_| bad("`seed` needs an integer"))?,
                "noise" => spec.noise = value.parse().map_err(|_| bad("`noise` needs a number"))?,
                "background" => {
                    spec.background = parse_color(value).ok_or_else(|| bad("bad colour"))?
                }
                "shape" => spec
                    .shapes
                    .push(parse_shape(value).ok_or_else(|| bad("bad shape"))?),
                _ => return Err(bad(&format!("unknown key `{key}`"))),
            }
        }
        let max_label = spec
            .shapes
            .iter()
            .map(|s| s.label as usize + 1)
            .max()
            .unwrap_or(0);
        spec.labels = labels.unwrap_or(max_label.max(2));
        spec.validate()?;
        Ok(spec)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let color = |c: [u8; 3]| format!("{},{},{}", c[0], c[1], c[2]);
        let mut out = format!(
            "height = {}\nwidth = {}\nlabels = {}\nbackground = {}\nblur = {}\nnoise = {}\nseed = {}\n",
            self.height,
            self.width,
            self.labels,
            color(self.background),
            self.blur,
            self.noise,
            self.seed
        );
        for s in &self.shapes {
            let geometry = match s.geometry {
                Geometry::Rect { x0, y0, x1, y1 } => {
                    format!("rect {} {x0} {y0} {x1} {y1}", s.label)
                }
                Geometry::Disk { cx, cy, radius } => format!("disk {} {cx} {cy} {radius}", s.label),
            };
            out += &format!("shape = {geometry} {} {}\n", color(s.color), s.jitter);
        }
        out
    }
}

fn parse_color(text: &str) -> Option<[u8; 3]> {
    let parts: Vec<u8> = text
        .split(',')
        .map(|p| p.trim().parse().ok())
        .collect::<Option<_>>()?;
    parts.try_into().ok()
}

fn parse_shape(text: &str) -> Option<Shape> {
    let words: Vec<&str> = text.split_whitespace().collect();
    let (kind, rest) = words.split_first()?;
    let (geometry, tail) = match *kind {
        "rect" if rest.len() == 7 => {
            let v: Vec<usize> = rest[1..5]
                .iter()
                .map(|w| w.parse().ok())
                .collect::<Option<_>>()?;
            (
                Geometry::Rect {
                    x0: v[0],
                    y0: v[1],
                    x1: v[2],
                    y1: v[3],
                },
                &rest[5..],
            )
        }
        "disk" if rest.len() == 6 => {
            let v: Vec<f64> = rest[1..4]
                .iter()
                .map(|w| w.parse().ok())
                .collect::<Option<_>>()?;
            (
                Geometry::Disk {
                    cx: v[0],
                    cy: v[1],
                    radius: v[2],
                },
                &rest[4..],
            )
        }
        _ => return None,
    };
    Some(Shape {
        label: rest[0].parse().ok()?,
        geometry,
        color: parse_color(tail[0])?,
        jitter: tail[1].parse().ok()?,
    })
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws the scene. Pixels take the colour and label of the last shape that
/// covers them, or the background and label 0.
pub fn render_scene(spec: &SceneSpec) -> Result<(RgbImage, LabelMap)> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut rng = rng(spec.seed, JITTER_STREAM);
    let mut pixels = Vec::with_capacity(h * w * 3);
    let mut labels = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let noise: [f64; 3] = [0; 3].map(|_| rng.sample(StandardNormal));
            let top = spec.shapes.iter().rev().find(|s| s.geometry.contains(y, x));
            let (color, jitter, label) = match top {
                Some(s) => (s.color, s.jitter, s.label),
                None => (spec.background, 0.0, 0),
            };
            for c in 0..3 {
                let v = color[c] as f64 + jitter * noise[c];
                pixels.push(v.round().clamp(0.0, 255.0) as u8);
            }
            labels.push(label);
        }
    }
    Ok((
        RgbImage::new(h, w, pixels)?,
        LabelMap::from_raw(h, w, labels),
    ))
}

/// Mean over the `(2r+1)`-wide window along one axis, clipped at the borders.
fn box_blur_axis(
    data: &[f64],
    h: usize,
    w: usize,
    l: usize,
    r: usize,
    horizontal: bool,
) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    let (outer, inner) = if horizontal { (h, w) } else { (w, h) };
    let at = |o: usize, i: usize| if horizontal { o * w + i } else { i * w + o };
    for o in 0..outer {
        for i in 0..inner {
            let lo = i.saturating_sub(r);
            let hi = (i + r).min(inner - 1);
            let dst = at(o, i) * l;
            for j in lo..=hi {
                let src = at(o, j) * l;
                for c in 0..l {
                    out[dst + c] += data[src + c];
                }
            }
            let n = (hi - lo + 1) as f64;
            for v in &mut out[dst..dst + l] {
                *v /= n;
            }
        }
    }
    out
}

/// Turns a ground-truth map into a plausible network output.
///
/// One-hot logits (all zero where the ground truth is 255) are box-blurred
/// with radius `blur`, perturbed by Gaussian noise of standard deviation
/// `noise`, pushed through a softmax and converted to unary costs.
pub fn corrupt_unary(
    gt: &LabelMap,
    labels: usize,
    blur: usize,
    noise: f64,
    seed: u64,
) -> Result<UnaryField> {
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(Error::Validation("noise must be non-negative".into()));
    }
    if labels < 2 {
        return Err(Error::Validation("need at least 2 labels".into()));
    }
    gt.check_classes(labels, true)?;
    let (h, w, l) = (gt.height(), gt.width(), labels);
    let mut logits = vec![0.0f64; h * w * l];
    for (i, &g) in gt.as_slice().iter().enumerate() {
        if g != IGNORE_LABEL {
            logits[i * l + g as usize] = 1.0;
        }
    }
    if blur > 0 {
        logits = box_blur_axis(&logits, h, w, l, blur, true);
        logits = box_blur_axis(&logits, h, w, l, blur, false);
    }
    let mut rng = rng(seed, NOISE_STREAM);
    for v in &mut logits {
        let z: f64 = rng.sample(StandardNormal);
        *v += noise * z;
    }
    let mut probs = vec![0f32; logits.len()];
    for (px, out) in logits.chunks_exact(l).zip(probs.chunks_exact_mut(l)) {
        let max = px.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = px.iter().map(|v| (v - max).exp()).sum();
        for (o, v) in out.iter_mut().zip(px) {
            *o = ((v - max).exp() / sum) as f32;
        }
    }
    unary_from_probs(&FeatureMap::new(h, w, l, probs)?, DEFAULT_EPSILON)
}

/// Renders `spec` and corrupts its ground truth with the spec's own blur,
/// noise and seed.
pub fn synthesize(spec: &SceneSpec) -> Result<(RgbImage, LabelMap, UnaryField)> {
    let (image, gt) = render_scene(spec)?;
    let unary = corrupt_unary(&gt, spec.labels, spec.blur, spec.noise, spec.seed)?;
    Ok((image, gt, unary))
}
