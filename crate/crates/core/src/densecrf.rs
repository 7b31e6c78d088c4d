//! Fully-connected CRF over pixels with Potts compatibility and mean-field
//! inference.
//!
//! The energy of a labelling `x` is
//!
//! ```text
//! E(x) = Σ_i θ_i(x_i) + Σ_{i<j} μ(x_i, x_j) · [ w1 · exp(-|p_i-p_j|²/2σα² - |I_i-I_j|²/2σβ²)
//!                                            + w2 · exp(-|p_i-p_j|²/2σγ²) ]
//! ```
//!
//! with `θ_i(l) = -log P_i(l)`, pixel positions `p` (column, row), raw 0–255
//! RGB colours `I` and `μ(a, b) = [a ≠ b]`.
//!
//! A mean-field step updates every pixel in parallel from the previous
//! beliefs `Q`:
//!
//! 1. filter `Q` with each kernel and remove the pixel's own contribution,
//!    giving messages `m_k(i, l) = Σ_{j≠i} k(i, j) Q_j(l)`;
//! 2. apply Potts: `pw(i, l) = Σ_k w_k (Σ_l' m_k(i, l') - m_k(i, l))`;
//! 3. `Q'_i(l) ∝ exp(-θ_i(l) - pw(i, l))`.
//!
//! Filtering uses either the exact `O(N²)` sum or the permutohedral lattice.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::{confusion, mean_iou};
use crate::hdfilter::{gaussian_filter_exact, FeaturePoints, PermutohedralLattice, StageTimes};
use crate::types::{argmax_lowest, FeatureMap, LabelMap, RgbImage};

/// Probability floor applied before taking logarithms.
pub const DEFAULT_EPSILON: f32 = 1e-20;

/// Mean-field iterations when none are requested.
pub const DEFAULT_ITERATIONS: usize = 10;

/// Per-pixel, per-label costs `θ_i(l) = -log P_i(l)`.
#[derive(Clone, Debug, PartialEq)]
pub struct UnaryField {
    theta: FeatureMap,
}

impl UnaryField {
    /// Wraps a `H × W × L` cost map; needs at least two labels.
    pub fn from_theta(theta: FeatureMap) -> Result<Self> {
        if theta.channels() < 2 {
            return Err(Error::Validation(format!(
                "a unary field needs at least 2 labels, got {}",
                theta.channels()
            )));
        }
        Ok(Self { theta })
    }

    pub fn theta(&self) -> &FeatureMap {
        &self.theta
    }

    pub fn height(&self) -> usize {
        self.theta.height()
    }

    pub fn width(&self) -> usize {
        self.theta.width()
    }

    pub fn labels(&self) -> usize {
        self.theta.channels()
    }

    /// Labels minimizing the unary cost, lowest index on ties.
    pub fn argmin(&self) -> LabelMap {
        let labels = self
            .theta
            .as_slice()
            .chunks_exact(self.labels())
            .map(|px| {
                let neg: Vec<f32> = px.iter().map(|v| -v).collect();
                argmax_lowest(&neg) as u8
            })
            .collect();
        LabelMap::from_raw(self.height(), self.width(), labels)
    }
}

/// Converts per-pixel label probabilities into unary costs,
/// `θ = -ln(max(p, epsilon))`.
pub fn unary_from_probs(probs: &FeatureMap, epsilon: f32) -> Result<UnaryField> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::Validation("epsilon must be positive".into()));
    }
    for (i, px) in probs.as_slice().chunks_exact(probs.channels()).enumerate() {
        let sum: f64 = px.iter().map(|&p| p as f64).sum();
        if px.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-4 {
            return Err(Error::Validation(format!(
                "pixel {i} is not a probability vector (sum {sum})"
            )));
        }
    }
    let theta: Vec<f32> = probs
        .as_slice()
        .iter()
        .map(|&p| -(p.max(epsilon) as f64).ln() as f32)
        .collect();
    UnaryField::from_theta(FeatureMap::from_raw(
        probs.height(),
        probs.width(),
        probs.channels(),
        theta,
    ))
}

/// Weights and widths of the two Gaussian kernels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairwiseParams {
    /// Bilateral (position + colour) kernel weight.
    pub w1: f64,
    /// Spatial kernel weight.
    pub w2: f64,
    /// Bilateral position width, in pixels.
    pub sigma_alpha: f64,
    /// Bilateral colour width, in 0–255 intensity units.
    pub sigma_beta: f64,
    /// Spatial width, in pixels.
    pub sigma_gamma: f64,
}

impl Default for PairwiseParams {
    /// `w2 = 3`, `σγ = 3`, and the midpoints of the usual search ranges for
    /// the rest: `w1 = 4`, `σα = 60`, `σβ = 5`.
    fn default() -> Self {
        Self {
            w1: 4.0,
            w2: 3.0,
            sigma_alpha: 60.0,
            sigma_beta: 5.0,
            sigma_gamma: 3.0,
        }
    }
}

impl PairwiseParams {
    pub fn validate(&self) -> Result<()> {
        let sigmas = [self.sigma_alpha, self.sigma_beta, self.sigma_gamma];
        if sigmas.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Validation(format!(
                "kernel widths must be positive: {sigmas:?}"
            )));
        }
        if [self.w1, self.w2]
            .iter()
            .any(|w| !(w.is_finite() && *w >= 0.0))
        {
            return Err(Error::Validation(
                "kernel weights must be non-negative".into(),
            ));
        }
        Ok(())
    }

    fn hash_into(&self, h: &mut impl Hasher) {
        for v in [
            self.w1,
            self.w2,
            self.sigma_alpha,
            self.sigma_beta,
            self.sigma_gamma,
        ] {
            v.to_bits().hash(h);
        }
    }
}

/// Factorized belief: one label distribution per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanFieldState {
    q: FeatureMap,
}

impl MeanFieldState {
    /// Wraps beliefs that are non-negative and sum to 1 (±1e-5) per pixel.
    pub fn from_q(q: FeatureMap) -> Result<Self> {
        for (i, px) in q.as_slice().chunks_exact(q.channels()).enumerate() {
            let sum: f64 = px.iter().map(|&v| v as f64).sum();
            if px.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > 1e-5 {
                return Err(Error::Validation(format!(
                    "beliefs at pixel {i} sum to {sum}"
                )));
            }
        }
        Ok(Self { q })
    }

    /// Largest deviation of a pixel's belief sum from 1.
    pub fn normalization_error(&self) -> f64 {
        self.q
            .as_slice()
            .chunks_exact(self.q.channels())
            .map(|px| (px.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn q(&self) -> &FeatureMap {
        &self.q
    }

    pub fn into_q(self) -> FeatureMap {
        self.q
    }

    /// Most probable label per pixel, lowest index on ties.
    pub fn labels(&self) -> LabelMap {
        self.q.argmax()
    }

    /// Sum over pixels of the belief entropy, in nats.
    pub fn entropy(&self) -> f64 {
        self.q
            .as_slice()
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -(p as f64) * (p as f64).ln())
            .sum()
    }
}

/// Writes `softmax(logits)` into `out`, using `logits` as scratch.
fn softmax_into(logits: &mut [f64], out: &mut [f32]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for l in logits.iter_mut() {
        // far below the f32 range anyway; skips libm's slow underflow path
        let x = *l - max;
        *l = if x < -104.0 { 0.0 } else { x.exp() };
        sum += *l;
    }
    for (o, e) in out.iter_mut().zip(logits.iter()) {
        *o = (e / sum) as f32;
    }
}

/// Beliefs before any message passing: `Q_i = softmax(-θ_i)`.
pub fn init_state(unary: &UnaryField) -> MeanFieldState {
    let l = unary.labels();
    let mut q = vec![0f32; unary.theta.as_slice().len()];
    q.par_chunks_mut(l)
        .zip(unary.theta.as_slice().par_chunks(l))
        .for_each(|(out, theta)| {
            let mut logits: Vec<f64> = theta.iter().map(|&t| -(t as f64)).collect();
            softmax_into(&mut logits, out);
        });
    MeanFieldState {
        q: FeatureMap::from_raw(unary.height(), unary.width(), l, q),
    }
}

/// How kernel sums over all pixel pairs are evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Backend {
    /// Direct `O(N²)` summation.
    Exact,
    /// Permutohedral-lattice approximation, `O(N)` per iteration.
    Lattice,
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Backend::Exact),
            "lattice" => Ok(Backend::Lattice),
            _ => Err(Error::Validation(format!("unknown backend {s:?}"))),
        }
    }
}

#[derive(Debug)]
enum KernelFilter {
    /// Weight is zero; the kernel contributes nothing.
    Off,
    Exact(FeaturePoints),
    Lattice {
        lattice: PermutohedralLattice,
        self_weights: Vec<f64>,
    },
}

impl KernelFilter {
    fn build(feats: FeaturePoints, weight: f64, backend: Backend) -> Self {
        if weight == 0.0 {
            return KernelFilter::Off;
        }
        match backend {
            Backend::Exact => KernelFilter::Exact(feats),
            Backend::Lattice => {
                let lattice = PermutohedralLattice::build(&feats);
                let self_weights = lattice.self_weights();
                KernelFilter::Lattice {
                    lattice,
                    self_weights,
                }
            }
        }
    }

    /// Filtered beliefs `Σ_j k(i, j) q_j(l)`, including `j = i`, and each
    /// pixel's weight on itself (`None` means 1).
    fn filter(
        &self,
        q: &[f32],
        labels: usize,
        times: &mut StageTimes,
    ) -> Result<Option<Filtered<'_>>> {
        Ok(match self {
            KernelFilter::Off => None,
            KernelFilter::Exact(feats) => Some(Filtered {
                values: Values::F64(gaussian_filter_exact(q, labels, feats)?),
                self_weights: None,
            }),
            KernelFilter::Lattice {
                lattice,
                self_weights,
            } => Some(Filtered {
                values: Values::F32(lattice.filter_f32_timed(q, labels, times)?),
                self_weights: Some(self_weights),
            }),
        })
    }
}

struct Filtered<'a> {
    values: Values,
    self_weights: Option<&'a [f64]>,
}

enum Values {
    F64(Vec<f64>),
    F32(Vec<f32>),
}

impl Values {
    fn copy_row(&self, i: usize, out: &mut [f64]) {
        let n = out.len();
        match self {
            Values::F64(v) => out.copy_from_slice(&v[i * n..(i + 1) * n]),
            Values::F32(v) => {
                for (o, &x) in out.iter_mut().zip(&v[i * n..(i + 1) * n]) {
                    *o = x as f64;
                }
            }
        }
    }
}

/// Features `(x/σα, y/σα, r/σβ, g/σβ, b/σβ)` per pixel.
pub fn bilateral_features(image: &RgbImage, params: &PairwiseParams) -> FeaturePoints {
    let (a, b) = (params.sigma_alpha, params.sigma_beta);
    let mut coords = Vec::with_capacity(image.height() * image.width() * 5);
    for y in 0..image.height() {
        for x in 0..image.width() {
            let [r, g, bl] = image.pixel(y, x);
            coords.extend([
                x as f64 / a,
                y as f64 / a,
                r as f64 / b,
                g as f64 / b,
                bl as f64 / b,
            ]);
        }
    }
    FeaturePoints::new(5, coords).expect("finite features")
}

/// Features `(x/σγ, y/σγ)` per pixel.
pub fn spatial_features(height: usize, width: usize, params: &PairwiseParams) -> FeaturePoints {
    let g = params.sigma_gamma;
    let mut coords = Vec::with_capacity(height * width * 2);
    for y in 0..height {
        for x in 0..width {
            coords.extend([x as f64 / g, y as f64 / g]);
        }
    }
    FeaturePoints::new(2, coords).expect("finite features")
}

fn image_fingerprint(image: &RgbImage, params: &PairwiseParams) -> u64 {
    let mut h = DefaultHasher::new();
    image.height().hash(&mut h);
    image.width().hash(&mut h);
    image.as_bytes().hash(&mut h);
    params.hash_into(&mut h);
    h.finish()
}

/// Filtering structures for one `(image, params, backend)` triple.
///
/// Pixel features do not change across iterations, so lattices are built
/// once and reused by every [`mean_field_step`].
#[derive(Debug)]
pub struct CrfKernels {
    backend: Backend,
    height: usize,
    width: usize,
    fingerprint: u64,
    bilateral: KernelFilter,
    spatial: KernelFilter,
    build_time: Duration,
}

impl CrfKernels {
    pub fn build(image: &RgbImage, params: &PairwiseParams, backend: Backend) -> Result<Self> {
        params.validate()?;
        let t = Instant::now();
        let (bilateral, spatial) = rayon::join(
            || KernelFilter::build(bilateral_features(image, params), params.w1, backend),
            || {
                KernelFilter::build(
                    spatial_features(image.height(), image.width(), params),
                    params.w2,
                    backend,
                )
            },
        );
        Ok(Self {
            backend,
            height: image.height(),
            width: image.width(),
            fingerprint: image_fingerprint(image, params),
            bilateral,
            spatial,
            build_time: t.elapsed(),
        })
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn build_time(&self) -> Duration {
        self.build_time
    }

    /// `true` if these kernels were built for exactly this image and params.
    pub fn matches(&self, image: &RgbImage, params: &PairwiseParams) -> bool {
        self.height == image.height()
            && self.width == image.width()
            && self.fingerprint == image_fingerprint(image, params)
    }
}

/// Wall time per inference stage.
#[derive(Clone, Copy, Debug, Default)]
pub struct InferenceTimes {
    pub build: Duration,
    pub filter: StageTimes,
    pub exact: Duration,
    pub update: Duration,
}

impl InferenceTimes {
    pub fn total(&self) -> Duration {
        self.build
            + self.filter.splat
            + self.filter.blur
            + self.filter.slice
            + self.exact
            + self.update
    }
}

fn check_dims(state: &MeanFieldState, unary: &UnaryField, image: &RgbImage) -> Result<()> {
    let want = (unary.height(), unary.width());
    if (state.q.height(), state.q.width()) != want || state.q.channels() != unary.labels() {
        return Err(Error::Shape(format!(
            "state is {:?}, unary is {:?}",
            state.q.shape(),
            unary.theta.shape()
        )));
    }
    if (image.height(), image.width()) != want {
        return Err(Error::Shape(format!(
            "image is {}x{}, unary is {}x{}",
            image.height(),
            image.width(),
            want.0,
            want.1
        )));
    }
    Ok(())
}

/// One synchronous mean-field update of every pixel.
///
/// `kernels` must have been built from `image` and `params`; otherwise
/// [`Error::InvalidatedCache`] is returned.
pub fn mean_field_step(
    state: &MeanFieldState,
    unary: &UnaryField,
    image: &RgbImage,
    params: &PairwiseParams,
    kernels: &CrfKernels,
) -> Result<MeanFieldState> {
    mean_field_step_timed(
        state,
        unary,
        image,
        params,
        kernels,
        &mut InferenceTimes::default(),
    )
}

/// [`mean_field_step`] with per-stage timing.
pub fn mean_field_step_timed(
    state: &MeanFieldState,
    unary: &UnaryField,
    image: &RgbImage,
    params: &PairwiseParams,
    kernels: &CrfKernels,
    times: &mut InferenceTimes,
) -> Result<MeanFieldState> {
    check_dims(state, unary, image)?;
    if !kernels.matches(image, params) {
        return Err(Error::InvalidatedCache);
    }
    let labels = unary.labels();
    let q = state.q.as_slice();

    let t = Instant::now();
    let bilateral = kernels.bilateral.filter(q, labels, &mut times.filter)?;
    let spatial = kernels.spatial.filter(q, labels, &mut times.filter)?;
    if kernels.backend == Backend::Exact {
        times.exact += t.elapsed();
    }
    let kernels = [(bilateral, params.w1), (spatial, params.w2)];

    let t = Instant::now();
    let mut next = vec![0f32; q.len()];
    next.par_chunks_mut(labels)
        .zip(unary.theta.as_slice().par_chunks(labels))
        .zip(q.par_chunks(labels))
        .enumerate()
        .for_each_init(
            || (vec![0f64; labels], vec![0f64; labels]),
            |(logits, m), (i, ((out, theta), qi))| {
                for (logit, &t) in logits.iter_mut().zip(theta.iter()) {
                    *logit = -(t as f64);
                }
                for (filtered, weight) in &kernels {
                    let Some(f) = filtered else { continue };
                    f.values.copy_row(i, m);
                    // messages exclude the pixel itself: m = F - K(i,i) q_i
                    let own = f.self_weights.map_or(1.0, |s| s[i]);
                    for (m, &q) in m.iter_mut().zip(qi) {
                        *m -= own * q as f64;
                    }
                    let total: f64 = m.iter().sum();
                    for (logit, &ml) in logits.iter_mut().zip(m.iter()) {
                        *logit -= weight * (total - ml);
                    }
                }
                softmax_into(logits, out);
            },
        );
    times.update += t.elapsed();

    Ok(MeanFieldState {
        q: FeatureMap::from_raw(unary.height(), unary.width(), labels, next),
    })
}

/// Runs `iters` mean-field steps from [`init_state`] and returns the final
/// beliefs with their per-pixel argmax. `iters = 0` gives the unary argmax.
pub fn run_inference(
    unary: &UnaryField,
    image: &RgbImage,
    params: &PairwiseParams,
    iters: usize,
    backend: Backend,
) -> Result<(MeanFieldState, LabelMap)> {
    run_inference_timed(
        unary,
        image,
        params,
        iters,
        backend,
        &mut InferenceTimes::default(),
    )
}

/// [`run_inference`] with per-stage timing.
pub fn run_inference_timed(
    unary: &UnaryField,
    image: &RgbImage,
    params: &PairwiseParams,
    iters: usize,
    backend: Backend,
    times: &mut InferenceTimes,
) -> Result<(MeanFieldState, LabelMap)> {
    params.validate()?;
    let mut state = init_state(unary);
    check_dims(&state, unary, image)?;
    if iters > 0 {
        let kernels = CrfKernels::build(image, params, backend)?;
        times.build += kernels.build_time();
        for _ in 0..iters {
            state = mean_field_step_timed(&state, unary, image, params, &kernels, times)?;
        }
    }
    let labels = state.labels();
    Ok((state, labels))
}

/// Exact energy of a labelling, summing every unordered pixel pair once.
/// `O(N²)`; meant for diagnostics on small images.
pub fn energy(
    labels: &LabelMap,
    unary: &UnaryField,
    image: &RgbImage,
    params: &PairwiseParams,
) -> Result<f64> {
    let (h, w) = (unary.height(), unary.width());
    if (labels.height(), labels.width()) != (h, w) || (image.height(), image.width()) != (h, w) {
        return Err(Error::Shape(
            "labels, unary and image must share one size".into(),
        ));
    }
    labels.check_classes(unary.labels(), false)?;
    let n = h * w;
    let x = labels.as_slice();
    let unary_sum: f64 = (0..n)
        .map(|i| unary.theta.as_slice()[i * unary.labels() + x[i] as usize] as f64)
        .sum();
    let pos = |i: usize| ((i % w) as f64, (i / w) as f64);
    let pairwise: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let (xi, yi) = pos(i);
            let ci = image.pixel(i / w, i % w);
            let mut acc = 0.0;
            for j in i + 1..n {
                if x[i] == x[j] {
                    continue;
                }
                let (xj, yj) = pos(j);
                let cj = image.pixel(j / w, j % w);
                let dp = (xi - xj).powi(2) + (yi - yj).powi(2);
                let dc: f64 = (0..3).map(|k| (ci[k] as f64 - cj[k] as f64).powi(2)).sum();
                acc += params.w1
                    * (-dp / (2.0 * params.sigma_alpha.powi(2))
                        - dc / (2.0 * params.sigma_beta.powi(2)))
                    .exp()
                    + params.w2 * (-dp / (2.0 * params.sigma_gamma.powi(2))).exp();
            }
            acc
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    Ok(unary_sum + pairwise)
}

/// An inclusive arithmetic range `start:step:end`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamRange {
    pub start: f64,
    pub step: f64,
    pub end: f64,
}

impl ParamRange {
    pub fn new(start: f64, step: f64, end: f64) -> Result<Self> {
        if ![start, step, end].iter().all(|v| v.is_finite()) || end < start || step < 0.0 {
            return Err(Error::Validation(format!("bad range {start}:{step}:{end}")));
        }
        if step == 0.0 && end != start {
            return Err(Error::Validation("a zero step needs start = end".into()));
        }
        Ok(Self { start, step, end })
    }

    pub fn single(value: f64) -> Self {
        Self {
            start: value,
            step: 0.0,
            end: value,
        }
    }

    /// Parses `v`, `start:end` (step 1) or `start:step:end`.
    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<f64> = text
            .split(':')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Validation(format!("bad range {text:?}")))
            })
            .collect::<Result<_>>()?;
        match parts[..] {
            [v] => Ok(Self::single(v)),
            [a, b] => Self::new(a, 1.0, b),
            [a, s, b] => Self::new(a, s, b),
            _ => Err(Error::Validation(format!("bad range {text:?}"))),
        }
    }

    pub fn values(&self) -> Vec<f64> {
        if self.step == 0.0 {
            return vec![self.start];
        }
        let count = ((self.end - self.start) / self.step + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|k| self.start + k as f64 * self.step)
            .collect()
    }

    /// Values around `center` at half the step, within one step either way
    /// and inside the range.
    fn refine_around(&self, center: f64) -> Vec<f64> {
        if self.step == 0.0 {
            return vec![center];
        }
        let half = self.step / 2.0;
        (-2..=2)
            .map(|k| center + k as f64 * half)
            .filter(|v| *v >= self.start - 1e-9 && *v <= self.end + 1e-9)
            .collect()
    }
}

/// Search space for [`grid_search`]: ranges for `w1`, `σα`, `σβ` and fixed
/// spatial-kernel settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchRanges {
    pub w1: ParamRange,
    pub sigma_alpha: ParamRange,
    pub sigma_beta: ParamRange,
    pub w2: f64,
    pub sigma_gamma: f64,
}

impl Default for SearchRanges {
    /// `w1 ∈ 3:6`, `σα ∈ 30:10:100`, `σβ ∈ 3:6`, with `w2 = σγ = 3`.
    fn default() -> Self {
        Self {
            w1: ParamRange::new(3.0, 1.0, 6.0).unwrap(),
            sigma_alpha: ParamRange::new(30.0, 10.0, 100.0).unwrap(),
            sigma_beta: ParamRange::new(3.0, 1.0, 6.0).unwrap(),
            w2: 3.0,
            sigma_gamma: 3.0,
        }
    }
}

/// One held-out example: unary costs, image and ground truth.
#[derive(Clone, Debug)]
pub struct ValidationCase {
    pub unary: UnaryField,
    pub image: RgbImage,
    pub gt: LabelMap,
}

/// Which phase of the search evaluated a grid point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SearchStage {
    Coarse,
    Fine,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPoint {
    pub stage: SearchStage,
    pub w1: f64,
    pub sigma_alpha: f64,
    pub sigma_beta: f64,
    pub mean_miou: f64,
}

impl GridPoint {
    fn key(&self) -> (f64, f64, f64) {
        (self.w1, self.sigma_alpha, self.sigma_beta)
    }

    /// Higher score wins; ties go to the lexicographically smallest
    /// `(w1, σα, σβ)`.
    fn beats(&self, other: &GridPoint) -> bool {
        self.mean_miou > other.mean_miou
            || (self.mean_miou == other.mean_miou && self.key() < other.key())
    }
}

#[derive(Clone, Debug)]
pub struct SearchReport {
    /// Every evaluated point, coarse stage first, each stage in grid order.
    pub points: Vec<GridPoint>,
    pub coarse_best: GridPoint,
    pub best: GridPoint,
    pub params: PairwiseParams,
}

/// Mean over cases of the per-case mean IOU after CRF inference.
pub fn score_params(
    cases: &[ValidationCase],
    params: &PairwiseParams,
    iters: usize,
    backend: Backend,
) -> Result<f64> {
    if cases.is_empty() {
        return Err(Error::Arity("need at least one validation case".into()));
    }
    let scores: Vec<f64> = cases
        .iter()
        .map(|c| {
            let (_, labels) = run_inference(&c.unary, &c.image, params, iters, backend)?;
            mean_iou(&confusion(&labels, &c.gt, c.unary.labels(), None)?)
        })
        .collect::<Result<_>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Coarse-to-fine search for `w1`, `σα` and `σβ` maximizing mean IOU.
///
/// The coarse stage scores the full grid of `ranges`. The fine stage halves
/// each step and scores the points within one coarse step of the coarse
/// winner (clipped to the ranges). The best point seen in either stage is
/// returned, so refinement never loses score.
pub fn grid_search(
    cases: &[ValidationCase],
    ranges: &SearchRanges,
    iters: usize,
    backend: Backend,
) -> Result<SearchReport> {
    if cases.is_empty() {
        return Err(Error::Arity("need at least one validation case".into()));
    }
    let make = |w1: f64, sa: f64, sb: f64| PairwiseParams {
        w1,
        w2: ranges.w2,
        sigma_alpha: sa,
        sigma_beta: sb,
        sigma_gamma: ranges.sigma_gamma,
    };
    let evaluate = |grid: Vec<(f64, f64, f64)>, stage: SearchStage| -> Result<Vec<GridPoint>> {
        grid.into_par_iter()
            .map(|(w1, sa, sb)| {
                Ok(GridPoint {
                    stage,
                    w1,
                    sigma_alpha: sa,
                    sigma_beta: sb,
                    mean_miou: score_params(cases, &make(w1, sa, sb), iters, backend)?,
                })
            })
            .collect()
    };
    let product = |a: &[f64], b: &[f64], c: &[f64]| -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        for &x in a {
            for &y in b {
                for &z in c {
                    out.push((x, y, z));
                }
            }
        }
        out
    };

    let coarse = evaluate(
        product(
            &ranges.w1.values(),
            &ranges.sigma_alpha.values(),
            &ranges.sigma_beta.values(),
        ),
        SearchStage::Coarse,
    )?;
    let coarse_best = *coarse
        .iter()
        .reduce(|best, p| if p.beats(best) { p } else { best })
        .expect("non-empty grid");

    let fine_grid: Vec<_> = product(
        &ranges.w1.refine_around(coarse_best.w1),
        &ranges.sigma_alpha.refine_around(coarse_best.sigma_alpha),
        &ranges.sigma_beta.refine_around(coarse_best.sigma_beta),
    )
    .into_iter()
    .filter(|k| !coarse.iter().any(|p| p.key() == *k))
    .collect();
    let fine = evaluate(fine_grid, SearchStage::Fine)?;

    let best = *fine
        .iter()
        .fold(&coarse_best, |best, p| if p.beats(best) { p } else { best });
    let mut points = coarse;
    points.extend(fine);
    Ok(SearchReport {
        points,
        coarse_best,
        best,
        params: make(best.w1, best.sigma_alpha, best.sigma_beta),
    })
}
