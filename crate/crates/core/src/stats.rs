//! Per-parameter distributions, the parameter file, and seeded sampling.
//!
//! Generation uses [`ChaCha8Rng`](rand_chacha::ChaCha8Rng), whose output
//! stream is fixed by its published algorithm and independent of platform.
//! Its name is written into every parameter file header.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::extract::{compute_gaps, rows_of, BrickRect, GapExclusions};

pub type GenRng = ChaCha8Rng;
pub const RNG_NAME: &str = "ChaCha8Rng";
pub const PARAMS_FORMAT_VERSION: u32 = 1;
/// Rejections allowed before the truncated Gaussian falls back to clamping.
pub const MAX_REJECTIONS: usize = 100;

pub fn rng_from_seed(seed: u64) -> GenRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seed for task `index` of a batch run: SplitMix64 of `master ^ index`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = (master ^ index).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDistribution {
    pub name: String,
    pub samples: Vec<f64>,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
}

impl ParamDistribution {
    /// Single-valued distribution; every draw returns `value`.
    pub fn constant(name: &str, value: f64) -> Self {
        ParamDistribution {
            name: name.to_string(),
            samples: vec![value],
            min: value,
            max: value,
            mean: value,
            std: 0.0,
        }
    }

    pub fn median(&self) -> f64 {
        let mut s = self.samples.clone();
        crate::extract::median(&mut s)
    }

    fn check(&self) -> Result<()> {
        let fail = |what: &str| Err(Error::Schema(format!("{}: {what}", self.name)));
        if self.samples.is_empty() {
            return fail("samples must not be empty");
        }
        if !self.samples.iter().all(|s| s.is_finite()) {
            return fail("samples must be finite");
        }
        if !(self.std >= 0.0) {
            return fail("std must be non-negative");
        }
        if !(self.min <= self.mean && self.mean <= self.max) {
            return fail("requires min <= mean <= max");
        }
        let refit = fit_distribution(&self.name, &self.samples)?;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
        if refit.min != self.min || refit.max != self.max {
            return fail("min/max disagree with samples");
        }
        if !close(refit.mean, self.mean) || !close(refit.std, self.std) {
            return fail("mean/std disagree with samples");
        }
        Ok(())
    }
}

pub fn fit_distribution(name: &str, samples: &[f64]) -> Result<ParamDistribution> {
    if samples.is_empty() {
        return Err(Error::InsufficientData(format!("no samples for {name}")));
    }
    if let Some(bad) = samples.iter().find(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument(format!("{name}: non-finite sample {bad}")));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let std = if samples.len() > 1 {
        (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(ParamDistribution {
        name: name.to_string(),
        samples: samples.to_vec(),
        min,
        max,
        // Rounding can push the mean of near-equal samples just outside.
        mean: mean.clamp(min, max),
        std,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// Normal(mean, std) restricted to [min, max] by rejection.
    #[serde(rename = "gaussian")]
    GaussianTruncated,
    /// Uniform pick from the extracted sample list.
    #[default]
    #[serde(rename = "empirical")]
    EmpiricalIndex,
}

/// `samples[floor(x * n)]` for a uniform draw `x` in [0, 1).
pub fn empirical_pick(samples: &[f64], x: f64) -> f64 {
    let n = samples.len();
    let i = ((x * n as f64).floor() as usize).min(n - 1);
    samples[i]
}

pub fn sample<R: Rng + ?Sized>(dist: &ParamDistribution, mode: SamplingMode, rng: &mut R) -> f64 {
    match mode {
        SamplingMode::EmpiricalIndex => {
            let x: f64 = rng.random();
            empirical_pick(&dist.samples, x)
        }
        SamplingMode::GaussianTruncated => {
            if dist.std == 0.0 {
                return dist.mean;
            }
            let mut draw = 0.0;
            for _ in 0..=MAX_REJECTIONS {
                let z: f64 = rng.sample(StandardNormal);
                draw = dist.mean + dist.std * z;
                if (dist.min..=dist.max).contains(&draw) {
                    return draw;
                }
            }
            draw.clamp(dist.min, dist.max)
        }
    }
}

/// The six quantities a wall is generated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Param {
    BrickWidth,
    BrickHeight,
    HGap,
    VGap,
    LevelJitter,
    RowOffset,
}

impl Param {
    pub const ALL: [Param; 6] = [
        Param::BrickWidth,
        Param::BrickHeight,
        Param::HGap,
        Param::VGap,
        Param::LevelJitter,
        Param::RowOffset,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Param::BrickWidth => "brick_width",
            Param::BrickHeight => "brick_height",
            Param::HGap => "h_gap",
            Param::VGap => "v_gap",
            Param::LevelJitter => "level_jitter",
            Param::RowOffset => "row_offset",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Param::ALL.into_iter().find(|p| p.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WallParameters {
    pub brick_width: ParamDistribution,
    pub brick_height: ParamDistribution,
    pub h_gap: ParamDistribution,
    pub v_gap: ParamDistribution,
    pub level_jitter: ParamDistribution,
    pub row_offset: ParamDistribution,
}

impl WallParameters {
    pub fn get(&self, p: Param) -> &ParamDistribution {
        match p {
            Param::BrickWidth => &self.brick_width,
            Param::BrickHeight => &self.brick_height,
            Param::HGap => &self.h_gap,
            Param::VGap => &self.v_gap,
            Param::LevelJitter => &self.level_jitter,
            Param::RowOffset => &self.row_offset,
        }
    }

    /// Zero-variance parameters: every draw is the given value.
    pub fn degenerate(width: f64, height: f64, h_gap: f64, v_gap: f64, jitter: f64, offset: f64) -> Self {
        WallParameters {
            brick_width: ParamDistribution::constant("brick_width", width),
            brick_height: ParamDistribution::constant("brick_height", height),
            h_gap: ParamDistribution::constant("h_gap", h_gap),
            v_gap: ParamDistribution::constant("v_gap", v_gap),
            level_jitter: ParamDistribution::constant("level_jitter", jitter),
            row_offset: ParamDistribution::constant("row_offset", offset),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for p in Param::ALL {
            let d = self.get(p);
            if d.name != p.name() {
                return Err(Error::Schema(format!("{} is stored under name {:?}", p.name(), d.name)));
            }
            d.check()?;
        }
        if !(self.brick_width.min > 0.0) {
            return Err(Error::Schema("brick_width: min must be positive".into()));
        }
        if !(self.brick_height.min > 0.0) {
            return Err(Error::Schema("brick_height: min must be positive".into()));
        }
        if !(self.h_gap.min >= 0.0) {
            return Err(Error::Schema("h_gap: min must be non-negative".into()));
        }
        if !(self.v_gap.min >= 0.0) {
            return Err(Error::Schema("v_gap: min must be non-negative".into()));
        }
        Ok(())
    }

    /// SHA-256 over the canonical parameter document.
    pub fn digest(&self) -> String {
        let text = serde_json::to_string(&self.document()).expect("parameters serialize");
        let hash = Sha256::digest(text.as_bytes());
        let hex: String = hash.iter().map(|b| format!("{b:02x}")).collect();
        format!("sha256:{hex}")
    }

    fn document(&self) -> ParamsDocument {
        ParamsDocument {
            format_version: PARAMS_FORMAT_VERSION,
            units: "mm".into(),
            rng: RNG_NAME.into(),
            parameters: Param::ALL.iter().map(|&p| self.get(p).clone()).collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.document()).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ParamsDocument = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        if doc.format_version != PARAMS_FORMAT_VERSION {
            return Err(Error::Schema(format!("format_version: unsupported {}", doc.format_version)));
        }
        if doc.units != "mm" {
            return Err(Error::Schema(format!("units: expected \"mm\", got {:?}", doc.units)));
        }
        if doc.rng != RNG_NAME {
            return Err(Error::Schema(format!("rng: expected {RNG_NAME:?}, got {:?}", doc.rng)));
        }
        let mut seen = BTreeSet::new();
        for d in &doc.parameters {
            if Param::from_name(&d.name).is_none() {
                return Err(Error::Schema(format!("unknown parameter {:?}", d.name)));
            }
            if !seen.insert(d.name.clone()) {
                return Err(Error::Schema(format!("duplicate parameter {:?}", d.name)));
            }
        }
        let take = |p: Param| {
            doc.parameters
                .iter()
                .find(|d| d.name == p.name())
                .cloned()
                .ok_or_else(|| Error::Schema(format!("missing parameter {:?}", p.name())))
        };
        let params = WallParameters {
            brick_width: take(Param::BrickWidth)?,
            brick_height: take(Param::BrickHeight)?,
            h_gap: take(Param::HGap)?,
            v_gap: take(Param::VGap)?,
            level_jitter: take(Param::LevelJitter)?,
            row_offset: take(Param::RowOffset)?,
        };
        params.validate()?;
        Ok(params)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsDocument {
    format_version: u32,
    units: String,
    rng: String,
    parameters: Vec<ParamDistribution>,
}

/// Parameters measured from a set of row-grouped rectangles.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub params: WallParameters,
    pub exclusions: GapExclusions,
}

/// Measures all six parameters. The first and last brick of a course with
/// three or more bricks are left out of the width sample, as wall ends
/// usually hold cut bricks.
pub fn estimate_parameters(rects: &[BrickRect]) -> Result<Estimate> {
    estimate_parameters_on_grid(rects, None)
}

/// Edge positions read off a sampling grid of pitch `p` carry a rounding
/// error of variance p²/12 each. Given the pitch, every sample set is
/// shrunk toward its mean so its variance loses that share: two edges for
/// widths, heights and head joints, one for jitter and offsets. Bed joints
/// come from course levels averaged over many bricks and are left as is.
pub fn estimate_parameters_on_grid(rects: &[BrickRect], pitch: Option<f64>) -> Result<Estimate> {
    if let Some(p) = pitch {
        if !(p.is_finite() && p >= 0.0) {
            return Err(Error::InvalidArgument(format!("sampling pitch must be non-negative, got {p}")));
        }
    }
    let q = pitch.map_or(0.0, |p| p * p / 12.0);
    let mut gaps = compute_gaps(rects)?;
    let widths: Vec<f64> = rows_of(rects)
        .iter()
        .flat_map(|row| {
            let inner = if row.len() >= 3 { &row[1..row.len() - 1] } else { &row[..] };
            inner.iter().map(|r| r.width).collect::<Vec<_>>()
        })
        .collect();
    let mut widths = widths;
    let mut heights: Vec<f64> = rects.iter().map(|r| r.height).collect();
    deflate(&mut widths, 2.0 * q);
    deflate(&mut heights, 2.0 * q);
    deflate(&mut gaps.h_gaps, 2.0 * q);
    deflate(&mut gaps.level_jitter, q);
    deflate(&mut gaps.row_offsets, q);
    let params = WallParameters {
        brick_width: fit_distribution(Param::BrickWidth.name(), &widths)?,
        brick_height: fit_distribution(Param::BrickHeight.name(), &heights)?,
        h_gap: fit_distribution(Param::HGap.name(), &gaps.h_gaps)?,
        v_gap: fit_distribution(Param::VGap.name(), &gaps.v_gaps)?,
        level_jitter: fit_distribution(Param::LevelJitter.name(), &gaps.level_jitter)?,
        row_offset: fit_distribution(Param::RowOffset.name(), &gaps.row_offsets)?,
    };
    params.validate()?;
    Ok(Estimate {
        params,
        exclusions: gaps.exclusions,
    })
}

/// Scales deviations from the mean so the variance drops by `excess`,
/// collapsing to the mean when the excess is the whole variance.
pub fn deflate(samples: &mut [f64], excess: f64) {
    if excess <= 0.0 || samples.len() < 2 {
        return;
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let k = if var > excess { (1.0 - excess / var).sqrt() } else { 0.0 };
    for x in samples.iter_mut() {
        *x = mean + k * (*x - mean);
    }
}
