//! SVG output and generated-versus-source statistics.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::extract::{compute_gaps, BrickRect};
use crate::generate::Wall;
use crate::stats::{Param, WallParameters};

/// Fewest unscaled bricks [`compare_stats`] will measure.
pub const MIN_COMPARE_BRICKS: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderStyle {
    pub brick_fill: String,
    pub mortar_fill: String,
    /// Brick outline width in mm; outlines use the mortar colour.
    pub stroke_width: f64,
    /// Pixels per mm.
    pub scale: f64,
}

impl Default for RenderStyle {
    fn default() -> Self {
        RenderStyle {
            brick_fill: "#9e5839".into(),
            mortar_fill: "#d9cfc0".into(),
            stroke_width: 0.0,
            scale: 1.0,
        }
    }
}

fn is_color(s: &str) -> bool {
    let hex = s.strip_prefix('#').is_some_and(|h| matches!(h.len(), 3 | 6) && h.chars().all(|c| c.is_ascii_hexdigit()));
    hex || (!s.is_empty() && s.chars().all(|c| c.is_ascii_alphabetic()))
}

impl RenderStyle {
    pub fn check(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::InvalidArgument(format!("scale must be positive, got {}", self.scale)));
        }
        if !(self.stroke_width.is_finite() && self.stroke_width >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "stroke width must be non-negative, got {}",
                self.stroke_width
            )));
        }
        for c in [&self.brick_fill, &self.mortar_fill] {
            if !is_color(c) {
                return Err(Error::InvalidArgument(format!("not a colour: {c:?}")));
            }
        }
        Ok(())
    }
}

/// One mortar background plus one rect per brick in id order. SVG's y axis
/// points down, so `y = (height - top) * scale`.
pub fn to_svg(wall: &Wall, style: &RenderStyle) -> String {
    let s = style.scale;
    let (w, h) = (wall.spec.width, wall.spec.height);
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">",
        w * s,
        h * s,
        w * s,
        h * s
    );
    let _ = writeln!(
        out,
        "<rect x=\"0\" y=\"0\" width=\"{}\" height=\"{}\" fill=\"{}\"/>",
        w * s,
        h * s,
        style.mortar_fill
    );
    let stroke = if style.stroke_width > 0.0 {
        format!(" stroke=\"{}\" stroke-width=\"{}\"", style.mortar_fill, style.stroke_width * s)
    } else {
        String::new()
    };
    let mut bricks: Vec<&BrickRect> = wall.bricks.iter().map(|b| &b.rect).collect();
    bricks.sort_by_key(|r| r.id);
    for r in bricks {
        let _ = writeln!(
            out,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"{stroke}/>",
            r.left() * s,
            (h - r.top()) * s,
            r.width * s,
            r.height * s,
            style.brick_fill
        );
    }
    out.push_str("</svg>\n");
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamComparison {
    pub param: Param,
    pub mean_src: f64,
    pub mean_gen: f64,
    pub std_src: f64,
    pub std_gen: f64,
    /// `|mean_gen - mean_src| / max(|mean_src|, std_src)`; the plain
    /// difference when both are zero.
    pub rel_error: f64,
    /// Values measured on the generated wall.
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<ParamComparison>,
    pub bricks_measured: usize,
}

impl ComparisonReport {
    pub fn get(&self, p: Param) -> Option<&ParamComparison> {
        self.rows.iter().find(|r| r.param == p)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("bricks_measured={}\n", self.bricks_measured);
        let _ = writeln!(
            out,
            "{:<14} {:>12} {:>12} {:>10} {:>10} {:>10}",
            "parameter", "mean_src", "mean_gen", "std_src", "std_gen", "rel_error"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<14} {:>12.4} {:>12.4} {:>10.4} {:>10.4} {:>10.6}",
                r.param.name(),
                r.mean_src,
                r.mean_gen,
                r.std_src,
                r.std_gen,
                r.rel_error
            );
        }
        out
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Re-measures the generated wall and sets it beside the source parameters.
/// Row offsets are compared modulo the bond period, since a course shifted
/// by a whole brick-and-joint looks the same.
pub fn compare_stats(source: &WallParameters, wall: &Wall) -> Result<ComparisonReport> {
    let unscaled: Vec<BrickRect> = wall.bricks.iter().filter(|b| !b.scaled).map(|b| b.rect).collect();
    if unscaled.len() < MIN_COMPARE_BRICKS {
        return Err(Error::InsufficientData(format!(
            "{} unscaled bricks, need {MIN_COMPARE_BRICKS}",
            unscaled.len()
        )));
    }
    let gaps = compute_gaps(&unscaled)?;
    let period = source.brick_width.median() + source.h_gap.median();
    let cyclic = |xs: &[f64]| xs.iter().map(|x| x.rem_euclid(period)).collect::<Vec<_>>();

    let mut rows = Vec::new();
    for p in Param::ALL {
        let (src, generated) = match p {
            Param::BrickWidth => (source.brick_width.samples.clone(), unscaled.iter().map(|r| r.width).collect()),
            Param::BrickHeight => (source.brick_height.samples.clone(), unscaled.iter().map(|r| r.height).collect()),
            Param::HGap => (source.h_gap.samples.clone(), gaps.h_gaps.clone()),
            Param::VGap => (source.v_gap.samples.clone(), gaps.v_gaps.clone()),
            Param::LevelJitter => (source.level_jitter.samples.clone(), gaps.level_jitter.clone()),
            Param::RowOffset => (cyclic(&source.row_offset.samples), cyclic(&gaps.row_offsets)),
        };
        let generated: Vec<f64> = generated;
        if generated.is_empty() {
            return Err(Error::InsufficientData(format!("no {} measured on the wall", p.name())));
        }
        let (mean_src, std_src) = mean_std(&src);
        let (mean_gen, std_gen) = mean_std(&generated);
        let scale = mean_src.abs().max(std_src);
        let diff = (mean_gen - mean_src).abs();
        rows.push(ParamComparison {
            param: p,
            mean_src,
            mean_gen,
            std_src,
            std_gen,
            rel_error: if scale > 0.0 { diff / scale } else { diff },
            samples: generated,
        });
    }
    Ok(ComparisonReport {
        rows,
        bricks_measured: unscaled.len(),
    })
}
