//! Atrous spatial pyramid pooling and multi-scale score fusion.
//!
//! An ASPP head runs several branches over the same feature map. Each branch
//! is a chain of convolutions whose first stage is atrous at the branch's own
//! rate and whose later stages are `1 × 1`. Branch score maps share one grid
//! and are fused by elementwise sum.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::atrous::{
    atrous_conv_2d_holes, conv_2d_standard, resize_bilinear, AtrousRate, ConvKernel,
};
use crate::error::{Error, Result};
use crate::types::{FeatureMap, RgbImage};

/// One parallel branch: an atrous first stage followed by `1 × 1` stages.
#[derive(Clone, Debug, PartialEq)]
pub struct AsppBranch {
    pub rate: AtrousRate,
    pub stages: Vec<ConvKernel>,
}

impl AsppBranch {
    pub fn new(rate: AtrousRate, stages: Vec<ConvKernel>) -> Result<Self> {
        let Some(first) = stages.first() else {
            return Err(Error::Validation(
                "a branch needs at least one stage".into(),
            ));
        };
        let mut channels = first.c_out();
        for (i, k) in stages.iter().enumerate().skip(1) {
            if k.k_h() != 1 || k.k_w() != 1 {
                return Err(Error::Validation(format!(
                    "stage {i} must be 1x1, got {}x{}",
                    k.k_h(),
                    k.k_w()
                )));
            }
            if k.c_in() != channels {
                return Err(Error::Shape(format!(
                    "stage {i} expects {} channels, previous stage produces {channels}",
                    k.c_in()
                )));
            }
            channels = k.c_out();
        }
        Ok(Self { rate, stages })
    }

    pub fn in_channels(&self) -> usize {
        self.stages[0].c_in()
    }

    pub fn out_channels(&self) -> usize {
        self.stages.last().unwrap().c_out()
    }

    /// Runs the chain on `input` with "same" padding.
    pub fn forward(&self, input: &FeatureMap) -> Result<FeatureMap> {
        let mut x = atrous_conv_2d_holes(input, &self.stages[0], self.rate, true)?;
        for k in &self.stages[1..] {
            x = conv_2d_standard(&x, k, true)?;
        }
        Ok(x)
    }
}

/// A set of parallel branches that all produce the same number of classes.
#[derive(Clone, Debug, PartialEq)]
pub struct AsppConfig {
    branches: Vec<AsppBranch>,
}

impl AsppConfig {
    pub fn new(branches: Vec<AsppBranch>) -> Result<Self> {
        let Some(first) = branches.first() else {
            return Err(Error::Validation("ASPP needs at least one branch".into()));
        };
        let (c_in, c_out) = (first.in_channels(), first.out_channels());
        for (i, b) in branches.iter().enumerate() {
            if b.out_channels() != c_out {
                return Err(Error::Shape(format!(
                    "branch {i} produces {} channels, branch 0 produces {c_out}",
                    b.out_channels()
                )));
            }
            if b.in_channels() != c_in {
                return Err(Error::Shape(format!(
                    "branch {i} consumes {} channels, branch 0 consumes {c_in}",
                    b.in_channels()
                )));
            }
        }
        Ok(Self { branches })
    }

    pub fn branches(&self) -> &[AsppBranch] {
        &self.branches
    }

    pub fn in_channels(&self) -> usize {
        self.branches[0].in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.branches[0].out_channels()
    }
}

/// Runs every branch on `input` and sums the branch outputs.
pub fn aspp_forward(input: &FeatureMap, cfg: &AsppConfig) -> Result<FeatureMap> {
    if input.channels() != cfg.in_channels() {
        return Err(Error::Shape(format!(
            "input has {} channels, ASPP expects {}",
            input.channels(),
            cfg.in_channels()
        )));
    }
    let outputs: Vec<FeatureMap> = cfg
        .branches
        .par_iter()
        .map(|b| b.forward(input))
        .collect::<Result<_>>()?;
    // Summed in branch order so the result does not depend on scheduling.
    let mut fused = outputs[0].clone();
    for out in &outputs[1..] {
        for (a, b) in fused.as_mut_slice().iter_mut().zip(out.as_slice()) {
            *a += *b;
        }
    }
    Ok(fused)
}

/// Structural description of an ASPP head, as read from a text file.
///
/// ```text
/// # ASPP-L over 512-channel features
/// in_channels = 512
/// rates = 6, 12, 18, 24
/// widths = 1024, 1024
/// classes = 21
/// kernel = 3
/// seed = 0
/// ```
///
/// `widths` lists the output widths of the stages before the final scoring
/// stage; a branch therefore has `widths.len() + 1` convolutions.
#[derive(Clone, Debug, PartialEq)]
pub struct AsppSpec {
    pub in_channels: usize,
    pub rates: Vec<usize>,
    pub widths: Vec<usize>,
    pub classes: usize,
    pub kernel: usize,
    pub seed: u64,
}

impl AsppSpec {
    /// Single branch at rate 12.
    pub fn large_fov(in_channels: usize, classes: usize) -> Self {
        Self::with_rates(in_channels, classes, vec![12])
    }

    /// Four branches at rates 2, 4, 8 and 12.
    pub fn small(in_channels: usize, classes: usize) -> Self {
        Self::with_rates(in_channels, classes, vec![2, 4, 8, 12])
    }

    /// Four branches at rates 6, 12, 18 and 24.
    pub fn large(in_channels: usize, classes: usize) -> Self {
        Self::with_rates(in_channels, classes, vec![6, 12, 18, 24])
    }

    fn with_rates(in_channels: usize, classes: usize, rates: Vec<usize>) -> Self {
        Self {
            in_channels,
            rates,
            widths: vec![1024, 1024],
            classes,
            kernel: 3,
            seed: 0,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut fields = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Validation(format!("line {}: expected key = value", n + 1))
            })?;
            fields.insert(key.trim().to_string(), value.trim().to_string());
        }
        let take = |key: &str| -> Result<&String> {
            fields
                .get(key)
                .ok_or_else(|| Error::Validation(format!("missing key `{key}`")))
        };
        let number = |key: &str| -> Result<usize> {
            take(key)?
                .parse()
                .map_err(|_| Error::Validation(format!("`{key}` must be a non-negative integer")))
        };
        let list = |key: &str| -> Result<Vec<usize>> {
            let raw = take(key)?;
            if raw.is_empty() {
                return Ok(Vec::new());
            }
            raw.split(',')
                .map(|v| {
                    v.trim()
                        .parse()
                        .map_err(|_| Error::Validation(format!("bad entry {v:?} in `{key}`")))
                })
                .collect()
        };
        for key in fields.keys() {
            if ![
                "in_channels",
                "rates",
                "widths",
                "classes",
                "kernel",
                "seed",
            ]
            .contains(&key.as_str())
            {
                return Err(Error::Validation(format!("unknown key `{key}`")));
            }
        }
        let spec = Self {
            in_channels: number("in_channels")?,
            rates: list("rates")?,
            widths: if fields.contains_key("widths") {
                list("widths")?
            } else {
                Vec::new()
            },
            classes: number("classes")?,
            kernel: if fields.contains_key("kernel") {
                number("kernel")?
            } else {
                3
            },
            seed: match fields.get("seed") {
                Some(s) => s
                    .parse()
                    .map_err(|_| Error::Validation("`seed` must be an unsigned integer".into()))?,
                None => 0,
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[usize]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        };
        format!(
            "in_channels = {}\nrates = {}\nwidths = {}\nclasses = {}\nkernel = {}\nseed = {}\n",
            self.in_channels,
            join(&self.rates),
            join(&self.widths),
            self.classes,
            self.kernel,
            self.seed
        )
    }

    fn validate(&self) -> Result<()> {
        if self.rates.is_empty() {
            return Err(Error::Validation(
                "`rates` must list at least one rate".into(),
            ));
        }
        if self.rates.contains(&0) {
            return Err(Error::Validation("rates must be at least 1".into()));
        }
        if self.in_channels == 0
            || self.classes == 0
            || self.kernel == 0
            || self.widths.contains(&0)
        {
            return Err(Error::Validation(
                "channel counts and kernel size must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Instantiates the head with seeded uniform weights scaled by
    /// `1 / sqrt(fan_in)`. Kernels are drawn branch by branch, stage by stage.
    pub fn build(&self) -> Result<AsppConfig> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut branches = Vec::with_capacity(self.rates.len());
        for &r in &self.rates {
            let mut stages = Vec::new();
            let mut c_in = self.in_channels;
            let widths = self
                .widths
                .iter()
                .copied()
                .chain(std::iter::once(self.classes));
            for (i, c_out) in widths.enumerate() {
                let k = if i == 0 { self.kernel } else { 1 };
                let bound = (1.0 / (k * k * c_in) as f32).sqrt();
                stages.push(ConvKernel::from_fn(k, k, c_in, c_out, |_, _, _, _| {
                    rng.random_range(-bound..=bound)
                }));
                c_in = c_out;
            }
            branches.push(AsppBranch::new(AtrousRate::new(r)?, stages)?);
        }
        AsppConfig::new(branches)
    }
}

/// Elementwise maximum over score maps that already share one grid.
pub fn multiscale_max_fuse(scores: &[FeatureMap]) -> Result<FeatureMap> {
    let Some(first) = scores.first() else {
        return Err(Error::Arity("need at least one score map to fuse".into()));
    };
    let mut fused = first.clone();
    for (i, s) in scores.iter().enumerate().skip(1) {
        if s.shape() != first.shape() {
            return Err(Error::Shape(format!(
                "score map {i} is {:?}, expected {:?}",
                s.shape(),
                first.shape()
            )));
        }
        for (a, &b) in fused.as_mut_slice().iter_mut().zip(s.as_slice()) {
            *a = a.max(b);
        }
    }
    Ok(fused)
}

/// Size of `n` pixels rescaled by `scale`, rounded and at least 1.
fn scaled_extent(n: usize, scale: f64) -> usize {
    ((n as f64 * scale).round() as usize).max(1)
}

/// Bilinearly resamples `map` once per scale (align-corners sampling).
pub fn rescale_pyramid(map: &FeatureMap, scales: &[f64]) -> Result<Vec<FeatureMap>> {
    scales
        .iter()
        .map(|&s| {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::Validation(format!(
                    "scale must be positive, got {s}"
                )));
            }
            resize_bilinear(
                map,
                scaled_extent(map.height(), s),
                scaled_extent(map.width(), s),
            )
        })
        .collect()
}

/// [`rescale_pyramid`] for RGB images; resampled values are rounded to bytes.
pub fn rescale_image_pyramid(image: &RgbImage, scales: &[f64]) -> Result<Vec<RgbImage>> {
    rescale_pyramid(&image.to_feature_map(), scales)?
        .iter()
        .map(RgbImage::from_feature_map)
        .collect()
}
