//! Shared fixtures and independent reference implementations.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segrefine::densecrf::{PairwiseParams, UnaryField};
use segrefine::synth::{Geometry, SceneSpec, Shape};
use segrefine::{LabelMap, RgbImage, IGNORE_LABEL};

pub const PALETTE: [[u8; 3]; 8] = [
    [220, 40, 40],
    [40, 180, 60],
    [50, 70, 220],
    [230, 200, 40],
    [160, 60, 200],
    [40, 200, 210],
    [240, 140, 30],
    [120, 120, 120],
];

/// A scene with one shape per foreground class, placed at random.
pub fn random_scene(
    height: usize,
    width: usize,
    labels: usize,
    blur: usize,
    noise: f64,
    seed: u64,
) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut colors = PALETTE.to_vec();
    colors.shuffle(&mut rng);
    let mut spec = SceneSpec {
        background: [25, 25, 30],
        blur,
        noise,
        seed,
        ..SceneSpec::new(height, width, labels)
    };
    let side = height.min(width);
    for label in 1..labels {
        let geometry = if rng.random_bool(0.5) {
            let radius = rng.random_range(side / 6..=side / 3) as f64;
            let r = radius as usize;
            Geometry::Disk {
                cx: rng.random_range(r..width - r) as f64,
                cy: rng.random_range(r..height - r) as f64,
                radius,
            }
        } else {
            let (rw, rh) = (
                rng.random_range(width / 4..=width / 2),
                rng.random_range(height / 4..=height / 2),
            );
            let (x0, y0) = (
                rng.random_range(0..=width - rw),
                rng.random_range(0..=height - rh),
            );
            Geometry::Rect {
                x0,
                y0,
                x1: x0 + rw,
                y1: y0 + rh,
            }
        };
        spec.shapes.push(Shape {
            label: label as u8,
            geometry,
            color: colors[label - 1],
            jitter: 6.0,
        });
    }
    spec
}

/// Random image, unary and beliefs for mean-field checks.
pub fn random_instance(
    height: usize,
    width: usize,
    labels: usize,
    seed: u64,
) -> (RgbImage, Vec<f32>, Vec<f32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: [u8; 3] = [rng.random(), rng.random(), rng.random()];
    let b: [u8; 3] = [rng.random(), rng.random(), rng.random()];
    let split = rng.random_range(1..width);
    let image = RgbImage::from_fn(height, width, |_, x| if x < split { a } else { b });
    let theta: Vec<f32> = (0..height * width * labels)
        .map(|_| rng.random_range(0.0..4.0))
        .collect();
    let mut q = Vec::with_capacity(theta.len());
    for _ in 0..height * width {
        let raw: Vec<f32> = (0..labels).map(|_| rng.random_range(0.01..1.0)).collect();
        let s: f32 = raw.iter().sum();
        q.extend(raw.iter().map(|v| v / s));
    }
    (image, theta, q)
}

/// One synchronous mean-field update written straight from the definition:
/// `Q'_i(l) ∝ exp(-θ_i(l) - Σ_{j≠i} Σ_{l'} μ(l, l') k(i, j) Q_j(l'))`.
pub fn brute_force_step(
    q: &[f32],
    theta: &[f32],
    image: &RgbImage,
    labels: usize,
    p: &PairwiseParams,
) -> Vec<f64> {
    let (h, w) = (image.height(), image.width());
    let n = h * w;
    let mut out = vec![0f64; n * labels];
    for i in 0..n {
        let (yi, xi) = ((i / w) as f64, (i % w) as f64);
        let ci = image.pixel(i / w, i % w);
        let mut energy = vec![0f64; labels];
        for (l, e) in energy.iter_mut().enumerate() {
            *e = theta[i * labels + l] as f64;
        }
        for j in 0..n {
            if j == i {
                continue;
            }
            let (yj, xj) = ((j / w) as f64, (j % w) as f64);
            let cj = image.pixel(j / w, j % w);
            let dp = (xi - xj) * (xi - xj) + (yi - yj) * (yi - yj);
            let mut dc = 0.0;
            for c in 0..3 {
                let t = ci[c] as f64 - cj[c] as f64;
                dc += t * t;
            }
            let k = p.w1
                * (-dp / (2.0 * p.sigma_alpha * p.sigma_alpha)
                    - dc / (2.0 * p.sigma_beta * p.sigma_beta))
                    .exp()
                + p.w2 * (-dp / (2.0 * p.sigma_gamma * p.sigma_gamma)).exp();
            for l in 0..labels {
                for l2 in 0..labels {
                    if l2 != l {
                        energy[l] += k * q[j * labels + l2] as f64;
                    }
                }
            }
        }
        let z: f64 = energy.iter().map(|e| (-e).exp()).sum();
        for l in 0..labels {
            out[i * labels + l] = (-energy[l]).exp() / z;
        }
    }
    out
}

/// Per-class IOU by counting, ignoring ground truth 255 and pixels outside
/// `keep`.
pub fn scalar_miou(
    pred: &LabelMap,
    gt: &LabelMap,
    classes: usize,
    keep: impl Fn(usize, usize) -> bool,
) -> f64 {
    let mut sum = 0.0;
    let mut present = 0;
    for c in 0..classes as u8 {
        let (mut inter, mut union) = (0u64, 0u64);
        for y in 0..gt.height() {
            for x in 0..gt.width() {
                let (p, g) = (pred.get(y, x), gt.get(y, x));
                if g == IGNORE_LABEL || !keep(y, x) {
                    continue;
                }
                if p == c && g == c {
                    inter += 1;
                }
                if p == c || g == c {
                    union += 1;
                }
            }
        }
        if union > 0 {
            sum += inter as f64 / union as f64;
            present += 1;
        }
    }
    sum / present as f64
}

/// Pixels within Chebyshev distance `width - 1` of a pixel that has a
/// 4-neighbour with a different ground-truth label.
pub fn scalar_band(gt: &LabelMap, width: usize) -> Vec<bool> {
    let (h, w) = (gt.height() as i64, gt.width() as i64);
    let edge = |y: i64, x: i64| {
        [(0, 1), (1, 0), (0, -1), (-1, 0)].iter().any(|(dy, dx)| {
            let (ny, nx) = (y + dy, x + dx);
            ny >= 0
                && nx >= 0
                && ny < h
                && nx < w
                && gt.get(ny as usize, nx as usize) != gt.get(y as usize, x as usize)
        })
    };
    let r = width as i64 - 1;
    let mut band = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let mut hit = false;
            for yy in (y - r).max(0)..=(y + r).min(h - 1) {
                for xx in (x - r).max(0)..=(x + r).min(w - 1) {
                    hit |= edge(yy, xx);
                }
            }
            band.push(width > 0 && hit);
        }
    }
    band
}

pub fn argmin_theta(unary: &UnaryField) -> LabelMap {
    unary.argmin()
}

pub fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}
