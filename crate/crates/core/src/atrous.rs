//! Atrous (dilated) convolution.
//!
//! All filters are applied as correlations (not mirrored). A kernel with `k`
//! taps per axis and rate `r` touches input samples spaced `r` apart, so its
//! footprint spans [`effective_kernel_size`] pixels while the weight count
//! stays `k_h · k_w · c_in · c_out`.
//!
//! Two interchangeable 2-D implementations are provided:
//!
//! * [`atrous_conv_2d_holes`] samples the input sparsely around every output
//!   pixel (equivalent to inserting `r - 1` zeros between filter taps).
//! * [`atrous_conv_2d_subsampled`] splits the input into the `r²` phase maps of
//!   an `r × r` polyphase decomposition, runs a plain rate-1 convolution on each
//!   and interleaves the results back.
//!
//! Both accumulate in `f64` in the same tap order, so they agree bit for bit.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::FeatureMap;

/// Tap-sampling stride of an atrous filter. Always at least 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AtrousRate(usize);

impl AtrousRate {
    pub const ONE: AtrousRate = AtrousRate(1);

    pub fn new(rate: usize) -> Result<Self> {
        if rate == 0 {
            return Err(Error::Validation("atrous rate must be at least 1".into()));
        }
        Ok(Self(rate))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

/// Filter bank with `k_h × k_w` taps mapping `c_in` channels to `c_out`.
///
/// Weights are stored with `c_out` fastest: the weight of tap `(ky, kx)`
/// from input channel `ci` to output channel `co` lives at
/// `((ky * k_w + kx) * c_in + ci) * c_out + co`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel {
    k_h: usize,
    k_w: usize,
    c_in: usize,
    c_out: usize,
    weights: Vec<f32>,
}

impl ConvKernel {
    pub fn new(
        k_h: usize,
        k_w: usize,
        c_in: usize,
        c_out: usize,
        weights: Vec<f32>,
    ) -> Result<Self> {
        if k_h == 0 || k_w == 0 || c_in == 0 || c_out == 0 {
            return Err(Error::Validation(format!(
                "kernel dimensions must be positive, got {k_h}x{k_w}x{c_in}x{c_out}"
            )));
        }
        let n = k_h * k_w * c_in * c_out;
        if weights.len() != n {
            return Err(Error::Validation(format!(
                "kernel {k_h}x{k_w}x{c_in}x{c_out} needs {n} weights, got {}",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Validation("kernel weights must be finite".into()));
        }
        Ok(Self {
            k_h,
            k_w,
            c_in,
            c_out,
            weights,
        })
    }

    pub fn filled(k_h: usize, k_w: usize, c_in: usize, c_out: usize, value: f32) -> Self {
        Self::new(k_h, k_w, c_in, c_out, vec![value; k_h * k_w * c_in * c_out])
            .expect("invalid kernel dimensions")
    }

    /// Builds a kernel from `f(ky, kx, ci, co)`.
    pub fn from_fn(
        k_h: usize,
        k_w: usize,
        c_in: usize,
        c_out: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f32,
    ) -> Self {
        let mut weights = Vec::with_capacity(k_h * k_w * c_in * c_out);
        for ky in 0..k_h {
            for kx in 0..k_w {
                for ci in 0..c_in {
                    for co in 0..c_out {
                        weights.push(f(ky, kx, ci, co));
                    }
                }
            }
        }
        Self::new(k_h, k_w, c_in, c_out, weights).expect("invalid kernel")
    }

    pub fn k_h(&self) -> usize {
        self.k_h
    }

    pub fn k_w(&self) -> usize {
        self.k_w
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn weight(&self, ky: usize, kx: usize, ci: usize, co: usize) -> f32 {
        self.weights[((ky * self.k_w + kx) * self.c_in + ci) * self.c_out + co]
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len()
    }

    /// Tap index that sits on the output pixel: `(k - 1) / 2` per axis, so
    /// even kernels anchor at `k / 2 - 1`.
    pub fn anchor(&self) -> (usize, usize) {
        ((self.k_h - 1) / 2, (self.k_w - 1) / 2)
    }

    /// All `c_out` weights of one tap and input channel.
    #[inline]
    fn tap(&self, ky: usize, kx: usize, ci: usize) -> &[f32] {
        let start = ((ky * self.k_w + kx) * self.c_in + ci) * self.c_out;
        &self.weights[start..start + self.c_out]
    }
}

/// Footprint of a `k`-tap filter at rate `r`: `k + (k - 1)(r - 1)`.
pub fn effective_kernel_size(k: usize, rate: AtrousRate) -> usize {
    if k == 0 {
        return 0;
    }
    k + (k - 1) * (rate.get() - 1)
}

/// One-dimensional atrous correlation with no padding:
/// `y[i] = Σ_{k=1..K} x[i + r·k] · w[k]`, with `x` indexed from 0 and
/// `w[k]` the k-th filter tap.
///
/// The output has `len(x) - r·K` samples.
pub fn atrous_conv_1d(x: &[f32], w: &[f32], rate: AtrousRate) -> Result<Vec<f32>> {
    if w.is_empty() {
        return Err(Error::Validation(
            "filter must have at least one tap".into(),
        ));
    }
    let r = rate.get();
    let reach = r * w.len();
    if x.len() < reach + 1 {
        return Err(Error::Size(format!(
            "signal of length {} has no valid output for {} taps at rate {r}",
            x.len(),
            w.len()
        )));
    }
    Ok((0..x.len() - reach)
        .map(|i| {
            w.iter()
                .enumerate()
                .map(|(k, &wk)| x[i + r * (k + 1)] as f64 * wk as f64)
                .sum::<f64>() as f32
        })
        .collect())
}

/// Output size along one axis; `None` when a valid convolution has no output.
fn output_extent(input: usize, taps: usize, rate: usize, padding: bool) -> Option<usize> {
    if padding {
        Some(input)
    } else {
        let span = (taps - 1) * rate + 1;
        input.checked_sub(span).map(|n| n + 1)
    }
}

fn check_channels(input: &FeatureMap, kernel: &ConvKernel) -> Result<()> {
    if input.channels() != kernel.c_in {
        return Err(Error::Shape(format!(
            "input has {} channels but kernel expects {}",
            input.channels(),
            kernel.c_in
        )));
    }
    Ok(())
}

/// Core correlation loop shared by every 2-D path.
///
/// The output pixel `(oy, ox)` is centred on input pixel
/// `(oy + off_y, ox + off_x)` and taps are read `rate` pixels apart. Samples
/// outside the input are zero.
fn correlate(
    input: &FeatureMap,
    kernel: &ConvKernel,
    rate: usize,
    out_h: usize,
    out_w: usize,
    offset: (usize, usize),
) -> FeatureMap {
    let (in_h, in_w, c_in) = input.shape();
    let c_out = kernel.c_out;
    let (ay, ax) = kernel.anchor();
    let src = input.as_slice();
    let mut out = vec![0f32; out_h * out_w * c_out];

    out.par_chunks_mut(out_w * c_out)
        .enumerate()
        .for_each(|(oy, row)| {
            let mut acc = vec![0f64; c_out];
            for ox in 0..out_w {
                acc.iter_mut().for_each(|a| *a = 0.0);
                let cy = (oy + offset.0) as isize;
                let cx = (ox + offset.1) as isize;
                for ky in 0..kernel.k_h {
                    let iy = cy + (rate * ky) as isize - (rate * ay) as isize;
                    if iy < 0 || iy >= in_h as isize {
                        continue;
                    }
                    for kx in 0..kernel.k_w {
                        let ix = cx + (rate * kx) as isize - (rate * ax) as isize;
                        if ix < 0 || ix >= in_w as isize {
                            continue;
                        }
                        let base = (iy as usize * in_w + ix as usize) * c_in;
                        for ci in 0..c_in {
                            let v = src[base + ci] as f64;
                            for (a, &w) in acc.iter_mut().zip(kernel.tap(ky, kx, ci)) {
                                *a += v * w as f64;
                            }
                        }
                    }
                }
                for (o, a) in row[ox * c_out..(ox + 1) * c_out].iter_mut().zip(&acc) {
                    *o = *a as f32;
                }
            }
        });
    FeatureMap::from_raw(out_h, out_w, c_out, out)
}

fn conv_2d(
    input: &FeatureMap,
    kernel: &ConvKernel,
    rate: usize,
    padding: bool,
) -> Result<FeatureMap> {
    check_channels(input, kernel)?;
    let out_h = output_extent(input.height(), kernel.k_h, rate, padding);
    let out_w = output_extent(input.width(), kernel.k_w, rate, padding);
    let (Some(out_h), Some(out_w)) = (out_h, out_w) else {
        return Err(Error::Size(format!(
            "{}x{} input is smaller than the {}x{} footprint",
            input.height(),
            input.width(),
            (kernel.k_h - 1) * rate + 1,
            (kernel.k_w - 1) * rate + 1
        )));
    };
    let (ay, ax) = kernel.anchor();
    let offset = if padding {
        (0, 0)
    } else {
        (rate * ay, rate * ax)
    };
    Ok(correlate(input, kernel, rate, out_h, out_w, offset))
}

/// Plain rate-1 convolution. With `padding` the output keeps the input size
/// (zero padding by the anchor offsets); otherwise only fully covered
/// positions are produced.
pub fn conv_2d_standard(
    input: &FeatureMap,
    kernel: &ConvKernel,
    padding: bool,
) -> Result<FeatureMap> {
    conv_2d(input, kernel, 1, padding)
}

/// Atrous convolution by sparse sampling of the input ("filter with holes").
///
/// Tap `(ky, kx)` reads the input at offset `r · (ky - ay, kx - ax)` from the
/// output pixel, where `(ay, ax)` is [`ConvKernel::anchor`].
pub fn atrous_conv_2d_holes(
    input: &FeatureMap,
    kernel: &ConvKernel,
    rate: AtrousRate,
    padding: bool,
) -> Result<FeatureMap> {
    conv_2d(input, kernel, rate.get(), padding)
}

/// Splits `input` into the phase map starting at `(py, px)` with stride `r`.
fn deinterlace(input: &FeatureMap, r: usize, py: usize, px: usize) -> FeatureMap {
    let (h, w, c) = input.shape();
    let ph = (h - py).div_ceil(r);
    let pw = (w - px).div_ceil(r);
    let mut data = Vec::with_capacity(ph * pw * c);
    for i in 0..ph {
        for j in 0..pw {
            data.extend_from_slice(input.pixel(py + r * i, px + r * j));
        }
    }
    FeatureMap::from_raw(ph, pw, c, data)
}

/// Atrous convolution by polyphase decomposition.
///
/// The input is deinterlaced into `r²` reduced maps, one per shift in the
/// `r × r` grid, each is convolved with the original (un-dilated) kernel at
/// rate 1, and the results are reinterlaced. Output pixel `(py + r·i, px + r·j)`
/// comes from position `(i, j)` of phase map `(py, px)`.
pub fn atrous_conv_2d_subsampled(
    input: &FeatureMap,
    kernel: &ConvKernel,
    rate: AtrousRate,
    padding: bool,
) -> Result<FeatureMap> {
    check_channels(input, kernel)?;
    let r = rate.get();
    let (in_h, in_w, _) = input.shape();
    let out_h = output_extent(in_h, kernel.k_h, r, padding);
    let out_w = output_extent(in_w, kernel.k_w, r, padding);
    let (Some(out_h), Some(out_w)) = (out_h, out_w) else {
        return Err(Error::Size(format!(
            "{in_h}x{in_w} input is smaller than the atrous footprint"
        )));
    };
    let c_out = kernel.c_out;
    let mut out = vec![0f32; out_h * out_w * c_out];

    // In valid mode the first output sits r·anchor pixels into the input, and
    // phase (py, px) of the output is phase (py + r·ay, px + r·ax) mod r of
    // the input, which is phase (py, px) again.
    for py in 0..r.min(in_h) {
        for px in 0..r.min(in_w) {
            let phase = deinterlace(input, r, py, px);
            let Ok(filtered) = conv_2d(&phase, kernel, 1, padding) else {
                // Phase too small for a valid output: no output pixel maps here.
                continue;
            };
            for i in 0..filtered.height() {
                let oy = py + r * i;
                if oy >= out_h {
                    break;
                }
                for j in 0..filtered.width() {
                    let ox = px + r * j;
                    if ox >= out_w {
                        break;
                    }
                    let dst = (oy * out_w + ox) * c_out;
                    out[dst..dst + c_out].copy_from_slice(filtered.pixel(i, j));
                }
            }
        }
    }
    Ok(FeatureMap::from_raw(out_h, out_w, c_out, out))
}

/// Resamples every channel to `out_h × out_w` with bilinear interpolation
/// under the align-corners convention: output corners coincide with input
/// corners and output pixel `o` samples source coordinate
/// `o · (in - 1) / (out - 1)`.
pub fn resize_bilinear(input: &FeatureMap, out_h: usize, out_w: usize) -> Result<FeatureMap> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Validation("target size must be positive".into()));
    }
    let (in_h, in_w, c) = input.shape();
    let src_coord = |o: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        if n_out == 1 || n_in == 1 {
            return (0, 0, 0.0);
        }
        let s = o as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let lo = (s.floor() as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, s - lo as f64)
    };
    let xs: Vec<_> = (0..out_w).map(|ox| src_coord(ox, in_w, out_w)).collect();
    let src = input.as_slice();
    let mut out = vec![0f32; out_h * out_w * c];
    out.par_chunks_mut(out_w * c)
        .enumerate()
        .for_each(|(oy, row)| {
            let (y0, y1, ty) = src_coord(oy, in_h, out_h);
            for (ox, &(x0, x1, tx)) in xs.iter().enumerate() {
                for ch in 0..c {
                    let at = |y: usize, x: usize| src[(y * in_w + x) * c + ch] as f64;
                    let (a, b, cc, d) = (at(y0, x0), at(y0, x1), at(y1, x0), at(y1, x1));
                    let top = a + (b - a) * tx;
                    let bottom = cc + (d - cc) * tx;
                    let v = top + (bottom - top) * ty;
                    let lo = a.min(b).min(cc).min(d);
                    let hi = a.max(b).max(cc).max(d);
                    row[ox * c + ch] = v.clamp(lo, hi) as f32;
                }
            }
        });
    Ok(FeatureMap::from_raw(out_h, out_w, c, out))
}

/// Enlarges a map by an integer factor per axis with align-corners bilinear
/// interpolation, producing `(H·factor) × (W·factor) × C`.
pub fn upsample_bilinear(input: &FeatureMap, factor: usize) -> Result<FeatureMap> {
    if factor == 0 {
        return Err(Error::Validation(
            "upsampling factor must be at least 1".into(),
        ));
    }
    if factor == 1 {
        return Ok(input.clone());
    }
    resize_bilinear(input, input.height() * factor, input.width() * factor)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rate(r: usize) -> AtrousRate {
        AtrousRate::new(r).unwrap()
    }

    #[test]
    fn one_d_follows_the_tap_formula() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        // y[i] = x[i+2] + x[i+4]
        assert_eq!(
            atrous_conv_1d(&x, &[1.0, 1.0], rate(2)).unwrap(),
            vec![8.0, 10.0]
        );
    }

    #[test]
    fn one_d_single_tap_is_a_shift() {
        let x: Vec<f32> = (0..12).map(|i| (i * i) as f32).collect();
        let y = atrous_conv_1d(&x, &[1.0], rate(5)).unwrap();
        assert_eq!(y.len(), 7);
        for (i, v) in y.iter().enumerate() {
            assert_eq!(*v, x[i + 5]);
        }
    }

    #[test]
    fn one_d_rate_one_is_plain_correlation() {
        let x = [0.5f32, -1.0, 2.0, 3.0, 0.25, 4.0, -2.0];
        let w = [1.0f32, -2.0, 0.5];
        let y = atrous_conv_1d(&x, &w, AtrousRate::ONE).unwrap();
        let expected: Vec<f32> = (0..x.len() - w.len())
            .map(|i| (0..w.len()).map(|k| x[i + 1 + k] * w[k]).sum())
            .collect();
        assert_eq!(y, expected);
    }

    #[test]
    fn one_d_too_short() {
        assert!(matches!(
            atrous_conv_1d(&[1.0; 4], &[1.0, 1.0], rate(2)),
            Err(Error::Size(_))
        ));
    }

    #[test]
    fn zero_rate_rejected() {
        assert!(AtrousRate::new(0).is_err());
    }

    #[test]
    fn effective_sizes() {
        assert_eq!(effective_kernel_size(3, rate(12)), 25);
        assert_eq!(effective_kernel_size(1, rate(7)), 1);
        assert_eq!(effective_kernel_size(3, AtrousRate::ONE), 3);
    }

    #[test]
    fn impulse_spreads_on_the_dilated_grid() {
        let mut input = FeatureMap::zeros(5, 5, 1);
        input.set(2, 2, 0, 1.0);
        let ones = ConvKernel::filled(3, 3, 1, 1, 1.0);
        for out in [
            atrous_conv_2d_holes(&input, &ones, rate(2), true).unwrap(),
            atrous_conv_2d_subsampled(&input, &ones, rate(2), true).unwrap(),
        ] {
            for y in 0..5 {
                for x in 0..5 {
                    let expected = if y % 2 == 0 && x % 2 == 0 { 1.0 } else { 0.0 };
                    assert_eq!(out.get(y, x, 0), expected, "({y},{x})");
                }
            }
        }
    }

    #[test]
    fn zero_kernel_gives_zero_output() {
        let input = FeatureMap::from_fn(6, 7, 2, |y, x, c| (y * 7 + x + c) as f32);
        let k = ConvKernel::filled(3, 3, 2, 3, 0.0);
        let out = atrous_conv_2d_holes(&input, &k, rate(3), true).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_mismatch() {
        let input = FeatureMap::zeros(4, 4, 2);
        let k = ConvKernel::filled(3, 3, 3, 1, 1.0);
        assert!(matches!(
            atrous_conv_2d_holes(&input, &k, rate(1), true),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            atrous_conv_2d_subsampled(&input, &k, rate(2), true),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn valid_mode_extent() {
        let input = FeatureMap::from_fn(11, 9, 1, |y, x, _| (y * 9 + x) as f32);
        let k = ConvKernel::filled(3, 3, 1, 1, 1.0);
        let holes = atrous_conv_2d_holes(&input, &k, rate(2), false).unwrap();
        assert_eq!((holes.height(), holes.width()), (7, 5));
        let sub = atrous_conv_2d_subsampled(&input, &k, rate(2), false).unwrap();
        assert_eq!(holes, sub);
        // top-left valid output is centred on (2, 2)
        let expected: f32 = [0, 2, 4]
            .iter()
            .flat_map(|&dy| [0, 2, 4].map(move |dx| (dy * 9 + dx) as f32))
            .sum();
        assert_eq!(holes.get(0, 0, 0), expected);
        assert!(atrous_conv_2d_holes(&FeatureMap::zeros(4, 4, 1), &k, rate(2), false).is_err());
    }

    #[test]
    fn even_kernel_anchor() {
        let k = ConvKernel::filled(4, 4, 1, 1, 1.0);
        assert_eq!(k.anchor(), (1, 1));
        let mut input = FeatureMap::zeros(9, 9, 1);
        input.set(4, 4, 0, 1.0);
        let out = atrous_conv_2d_holes(&input, &k, rate(2), true).unwrap();
        // taps at offsets {-2, 0, 2, 4}; the impulse shows up at 4 - offset
        let rows: Vec<usize> = (0..9).filter(|&y| out.get(y, 4, 0) != 0.0).collect();
        assert_eq!(rows, vec![0, 2, 4, 6]);
    }

    #[test]
    fn upsample_constant_and_identity() {
        let m = FeatureMap::filled(3, 2, 2, 1.5);
        let up = upsample_bilinear(&m, 4).unwrap();
        assert_eq!(up.shape(), (12, 8, 2));
        assert!(up.as_slice().iter().all(|&v| v == 1.5));
        let r = FeatureMap::from_fn(3, 4, 1, |y, x, _| (y * x) as f32);
        assert_eq!(upsample_bilinear(&r, 1).unwrap(), r);
        assert!(upsample_bilinear(&r, 0).is_err());
    }

    #[test]
    fn upsample_ramp_under_align_corners() {
        let m = FeatureMap::new(2, 1, 1, vec![0.0, 8.0]).unwrap();
        let up = upsample_bilinear(&m, 8).unwrap();
        assert_eq!(up.shape(), (16, 8, 1));
        for y in 0..16 {
            for x in 0..8 {
                let expected = 8.0 * y as f64 / 15.0;
                assert!((up.get(y, x, 0) as f64 - expected).abs() < 1e-6);
            }
        }
        assert_eq!(up.get(0, 0, 0), 0.0);
        assert_eq!(up.get(15, 7, 0), 8.0);
    }
}
