//! Wall generation, replay, validation and synthetic surveys.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::BrickRect;
use crate::grammar::{
    DerivationStep, DirectionLabel, GenState, Heading, LabeledBrick, RuleId, SideTags, Source, StepKind, WallBounds,
};
use crate::ingest::{LabeledPoint, Point2, PointClass};
use crate::stats::{rng_from_seed, SamplingMode, WallParameters};

pub const WALL_FORMAT_VERSION: u32 = 1;

/// Tolerance for geometric checks in [`validate`].
pub const GEOMETRY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WallSpec {
    pub width: f64,
    pub height: f64,
    pub seed: u64,
    #[serde(default)]
    pub mode: SamplingMode,
    #[serde(default)]
    pub direction: Heading,
}

impl WallSpec {
    pub fn new(width: f64, height: f64, seed: u64) -> Self {
        WallSpec {
            width,
            height,
            seed,
            mode: SamplingMode::default(),
            direction: Heading::default(),
        }
    }

    pub fn bounds(&self) -> WallBounds {
        WallBounds {
            u_min: 0.0,
            v_min: 0.0,
            u_max: self.width,
            v_max: self.height,
        }
    }

    pub fn check(&self, params: &WallParameters) -> Result<()> {
        if !(self.width.is_finite() && self.height.is_finite() && self.width > 0.0 && self.height > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "wall size must be positive, got {}x{}",
                self.width, self.height
            )));
        }
        if self.width < 2.0 * params.brick_width.min {
            return Err(Error::SpecTooSmall(format!(
                "width {} is below twice the minimum brick width {}",
                self.width, params.brick_width.min
            )));
        }
        if self.height < params.brick_height.min {
            return Err(Error::SpecTooSmall(format!(
                "height {} is below the minimum brick height {}",
                self.height, params.brick_height.min
            )));
        }
        Ok(())
    }
}

/// Ranges a wall's joints and course levels were drawn from, kept with the
/// wall so it can be checked without the parameter file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLimits {
    pub h_gap: [f64; 2],
    pub level_jitter: [f64; 2],
}

impl JointLimits {
    pub fn of(params: &WallParameters) -> Self {
        JointLimits {
            h_gap: [params.h_gap.min, params.h_gap.max],
            level_jitter: [params.level_jitter.min, params.level_jitter.max],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Wall {
    pub spec: WallSpec,
    pub params_digest: String,
    pub limits: JointLimits,
    /// Course baselines, bottom-up.
    pub baselines: Vec<f64>,
    pub bricks: Vec<LabeledBrick>,
    pub derivation: Vec<DerivationStep>,
}

impl Wall {
    pub fn rects(&self) -> Vec<BrickRect> {
        self.bricks.iter().map(|b| b.rect).collect()
    }

    pub fn row_count(&self) -> usize {
        self.baselines.len()
    }
}

fn new_state(spec: &WallSpec, params: &WallParameters, source: Source) -> GenState {
    GenState::new(spec.bounds(), spec.direction, Arc::new(params.clone()), spec.mode, source)
}

pub fn generate(spec: &WallSpec, params: &WallParameters) -> Result<Wall> {
    params.validate()?;
    spec.check(params)?;
    let mut state = new_state(spec, params, Source::Random(Box::new(rng_from_seed(spec.seed))));
    state.start()?;
    state.run()?;
    Ok(Wall {
        spec: *spec,
        params_digest: params.digest(),
        limits: JointLimits::of(params),
        baselines: state.baselines,
        bricks: state.placed,
        derivation: state.trace,
    })
}

/// Re-applies a recorded derivation with its recorded values, without a
/// random generator, and returns the bricks it produces.
pub fn replay(spec: &WallSpec, params: &WallParameters, derivation: &[DerivationStep]) -> Result<Vec<LabeledBrick>> {
    let mut state = new_state(spec, params, Source::Replay(BTreeMap::new()));
    for (i, step) in derivation.iter().enumerate() {
        if step.step != i {
            return Err(Error::Replay {
                step: i,
                message: format!("step numbered {}", step.step),
            });
        }
        // Reflections follow placements automatically.
        if step.rule == StepKind::Rule(RuleId::LabelReflect) {
            continue;
        }
        state.set_replay_values(step.sampled.clone());
        let applied = match step.rule {
            StepKind::SkippedEdge => state.skip_edge(),
            StepKind::Rule(rule) => state.apply(rule),
        };
        applied.map_err(|e| Error::Replay {
            step: i,
            message: e.to_string(),
        })?;
    }
    if let Some(i) = (0..derivation.len().max(state.trace.len())).find(|&i| derivation.get(i) != state.trace.get(i)) {
        return Err(Error::Replay {
            step: i,
            message: "recorded step differs from the re-applied one".into(),
        });
    }
    Ok(state.placed)
}

/// Replays a wall's own derivation; the parameters must match its digest.
pub fn replay_wall(wall: &Wall, params: &WallParameters) -> Result<Vec<LabeledBrick>> {
    if params.digest() != wall.params_digest {
        return Err(Error::InvalidArgument("parameters do not match the wall's params_digest".into()));
    }
    replay(&wall.spec, params, &wall.derivation)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Overlap { a: usize, b: usize },
    OutOfBounds { brick: usize },
    GapOutOfRange { left: usize, right: usize, gap: f64 },
    JitterOutOfRange { brick: usize, jitter: f64 },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Overlap { a, b } => write!(f, "overlap: bricks {a} and {b}"),
            Violation::OutOfBounds { brick } => write!(f, "out of bounds: brick {brick}"),
            Violation::GapOutOfRange { left, right, gap } => {
                write!(f, "head joint out of range: bricks {left}-{right} gap {gap}")
            }
            Violation::JitterOutOfRange { brick, jitter } => {
                write!(f, "level jitter out of range: brick {brick} jitter {jitter}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, pred: impl Fn(&Violation) -> bool) -> usize {
        self.violations.iter().filter(|v| pred(v)).count()
    }
}

fn overlapping_pairs(rects: &[BrickRect]) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..rects.len()).collect();
    order.sort_by(|&a, &b| rects[a].left().total_cmp(&rects[b].left()).then(a.cmp(&b)));
    let mut pairs = Vec::new();
    for (k, &i) in order.iter().enumerate() {
        for &j in &order[k + 1..] {
            if rects[j].left() >= rects[i].right() - GEOMETRY_TOLERANCE {
                break;
            }
            if overlaps_with_tolerance(&rects[i], &rects[j]) {
                pairs.push((i.min(j), i.max(j)));
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

fn overlaps_with_tolerance(a: &BrickRect, b: &BrickRect) -> bool {
    let t = GEOMETRY_TOLERANCE;
    a.left() < b.right() - t && b.left() < a.right() - t && a.bottom() < b.top() - t && b.bottom() < a.top() - t
}

/// Checks overlap, bounds, head joints between unscaled neighbours, and
/// course levels. A brick raised onto a taller brick of an earlier course is
/// exempt from the level check.
pub fn validate(wall: &Wall) -> ValidationReport {
    let t = GEOMETRY_TOLERANCE;
    let rects = wall.rects();
    let mut violations: Vec<Violation> = overlapping_pairs(&rects)
        .into_iter()
        .map(|(a, b)| Violation::Overlap {
            a: wall.bricks[a].rect.id,
            b: wall.bricks[b].rect.id,
        })
        .collect();

    let (w, h) = (wall.spec.width, wall.spec.height);
    for r in &rects {
        if r.left() < -t || r.right() > w + t || r.bottom() < -t || r.top() > h + t {
            violations.push(Violation::OutOfBounds { brick: r.id });
        }
    }

    let mut rows: BTreeMap<usize, Vec<&LabeledBrick>> = BTreeMap::new();
    for b in &wall.bricks {
        rows.entry(b.rect.row).or_default().push(b);
    }
    let [g_lo, g_hi] = wall.limits.h_gap;
    for row in rows.values_mut() {
        row.sort_by(|a, b| a.rect.left().total_cmp(&b.rect.left()));
        for pair in row.windows(2) {
            if pair[0].scaled || pair[1].scaled {
                continue;
            }
            let gap = pair[1].rect.left() - pair[0].rect.right();
            if gap < g_lo - t || gap > g_hi + t {
                violations.push(Violation::GapOutOfRange {
                    left: pair[0].rect.id,
                    right: pair[1].rect.id,
                    gap,
                });
            }
        }
    }

    let [j_lo, j_hi] = wall.limits.level_jitter;
    for b in &wall.bricks {
        let Some(&base) = wall.baselines.get(b.rect.row) else {
            violations.push(Violation::JitterOutOfRange {
                brick: b.rect.id,
                jitter: f64::NAN,
            });
            continue;
        };
        let jitter = b.rect.bottom() - base;
        if jitter >= j_lo - t && jitter <= j_hi + t {
            continue;
        }
        let lifted = jitter > j_hi
            && wall.bricks.iter().any(|o| {
                o.rect.row < b.rect.row
                    && o.rect.left() < b.rect.right()
                    && b.rect.left() < o.rect.right()
                    && (o.rect.top() - b.rect.bottom()).abs() <= t
            });
        if !lifted {
            violations.push(Violation::JitterOutOfRange { brick: b.rect.id, jitter });
        }
    }
    ValidationReport { violations }
}

/// Samples a regular grid over the wall face at `z = 0`, labels points
/// strictly inside a brick as `Brick`, then adds Gaussian noise to every
/// coordinate.
pub fn synthesize_cloud(wall: &Wall, pitch: f64, noise_std: f64, seed: u64) -> Result<Vec<LabeledPoint>> {
    if !(pitch.is_finite() && pitch > 0.0) {
        return Err(Error::InvalidArgument(format!("pitch must be positive, got {pitch}")));
    }
    if !(noise_std.is_finite() && noise_std >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise must be non-negative, got {noise_std}")));
    }
    let cells = |extent: f64| (0..).map(move |i| (i as f64 + 0.5) * pitch).take_while(move |&c| c < extent);
    let rows: Vec<f64> = cells(wall.spec.height).collect();

    let mut by_left: Vec<&BrickRect> = wall.bricks.iter().map(|b| &b.rect).collect();
    by_left.sort_by(|a, b| a.left().total_cmp(&b.left()));
    let mut open: Vec<&BrickRect> = Vec::new();
    let mut next = 0;
    let mut points = Vec::with_capacity(rows.len() * (wall.spec.width / pitch) as usize + rows.len());
    for u in cells(wall.spec.width) {
        while next < by_left.len() && by_left[next].left() < u {
            open.push(by_left[next]);
            next += 1;
        }
        open.retain(|r| r.right() > u);
        let mut column: Vec<&BrickRect> = open.iter().copied().filter(|r| r.left() < u).collect();
        column.sort_by(|a, b| a.bottom().total_cmp(&b.bottom()));
        let mut k = 0;
        for &v in &rows {
            while k < column.len() && column[k].top() <= v {
                k += 1;
            }
            let inside = k < column.len() && column[k].bottom() < v;
            let label = if inside { PointClass::Brick } else { PointClass::Mortar };
            points.push(LabeledPoint::new(u, v, 0.0, label));
        }
    }

    if noise_std > 0.0 {
        let mut rng = rng_from_seed(seed);
        for p in &mut points {
            p.x += noise_std * rng.sample::<f64, _>(StandardNormal);
            p.y += noise_std * rng.sample::<f64, _>(StandardNormal);
            p.z += noise_std * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(points)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RowEntry {
    row: usize,
    baseline: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BrickEntry {
    id: usize,
    cu: f64,
    cv: f64,
    width: f64,
    height: f64,
    row: usize,
    direction: DirectionLabel,
    scaled: bool,
    step: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WallDocument {
    format_version: u32,
    units: String,
    spec: WallSpec,
    params_digest: String,
    limits: JointLimits,
    rows: Vec<RowEntry>,
    bricks: Vec<BrickEntry>,
    derivation: Vec<DerivationStep>,
}

pub fn wall_to_json(wall: &Wall) -> Result<String> {
    let doc = WallDocument {
        format_version: WALL_FORMAT_VERSION,
        units: "mm".into(),
        spec: wall.spec,
        params_digest: wall.params_digest.clone(),
        limits: wall.limits,
        rows: wall
            .baselines
            .iter()
            .enumerate()
            .map(|(row, &baseline)| RowEntry { row, baseline })
            .collect(),
        bricks: wall
            .bricks
            .iter()
            .map(|b| BrickEntry {
                id: b.rect.id,
                cu: b.rect.center.u,
                cv: b.rect.center.v,
                width: b.rect.width,
                height: b.rect.height,
                row: b.rect.row,
                direction: b.direction,
                scaled: b.scaled,
                step: b.derivation_step,
            })
            .collect(),
        derivation: wall.derivation.clone(),
    };
    let mut text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Schema(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

pub fn wall_from_json(text: &str) -> Result<Wall> {
    let doc: WallDocument = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    if doc.format_version != WALL_FORMAT_VERSION {
        return Err(Error::Schema(format!("format_version: unsupported {}", doc.format_version)));
    }
    if doc.units != "mm" {
        return Err(Error::Schema(format!("units: expected \"mm\", got {:?}", doc.units)));
    }
    if let Some((i, r)) = doc.rows.iter().enumerate().find(|(i, r)| r.row != *i) {
        return Err(Error::Schema(format!("rows[{i}]: expected row {i}, got {}", r.row)));
    }
    for (i, step) in doc.derivation.iter().enumerate() {
        if step.step != i {
            return Err(Error::Schema(format!("derivation[{i}]: step numbered {}", step.step)));
        }
    }
    let bricks = doc
        .bricks
        .into_iter()
        .map(|b| {
            if !(b.width > 0.0 && b.height > 0.0) {
                return Err(Error::Schema(format!("bricks[{}]: width and height must be positive", b.id)));
            }
            Ok(LabeledBrick {
                rect: BrickRect {
                    id: b.id,
                    center: Point2::new(b.cu, b.cv),
                    width: b.width,
                    height: b.height,
                    row: b.row,
                },
                direction: b.direction,
                tags: SideTags::for_direction(b.direction),
                scaled: b.scaled,
                derivation_step: b.step,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Wall {
        spec: doc.spec,
        params_digest: doc.params_digest,
        limits: doc.limits,
        baselines: doc.rows.into_iter().map(|r| r.baseline).collect(),
        bricks,
        derivation: doc.derivation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::compute_gaps;
    use crate::stats::fit_distribution;
    use proptest::prelude::*;
    use rand::Rng;

    fn sigma_zero() -> WallParameters {
        WallParameters::degenerate(210.0, 45.0, 10.0, 12.0, 0.0, 110.0)
    }

    /// Clipped normal draws from a fixed stream.
    fn realistic(seed: u64) -> WallParameters {
        let mut rng = rng_from_seed(seed);
        let mut dist = |name: &str, mean: f64, std: f64, n: usize| {
            let xs: Vec<f64> = (0..n)
                .map(|_| mean + std * rng.sample::<f64, _>(StandardNormal))
                .map(|x| x.clamp(mean - 3.0 * std, mean + 3.0 * std))
                .collect();
            fit_distribution(name, &xs).unwrap()
        };
        WallParameters {
            brick_width: dist("brick_width", 210.0, 8.0, 200),
            brick_height: dist("brick_height", 45.0, 3.0, 200),
            h_gap: dist("h_gap", 10.0, 2.0, 200),
            v_gap: dist("v_gap", 12.0, 2.0, 200),
            level_jitter: dist("level_jitter", 0.0, 1.5, 200),
            row_offset: dist("row_offset", 110.0, 30.0, 200),
        }
    }

    fn brick(id: usize, left: f64, bottom: f64, right: f64, top: f64) -> LabeledBrick {
        let mut b = crate::grammar::label_assign(BrickRect::from_edges(id, left, bottom, right, top));
        b.derivation_step = id;
        b
    }

    fn hand_wall(bricks: Vec<LabeledBrick>, width: f64, height: f64) -> Wall {
        Wall {
            spec: WallSpec::new(width, height, 0),
            params_digest: String::new(),
            limits: JointLimits {
                h_gap: [0.0, 100.0],
                level_jitter: [-5.0, 5.0],
            },
            baselines: vec![0.0],
            bricks,
            derivation: Vec::new(),
        }
    }

    #[test]
    fn zero_variance_two_rows() {
        let wall = generate(&WallSpec::new(1000.0, 120.0, 7), &sigma_zero()).unwrap();
        assert_eq!(wall.baselines, vec![0.0, 57.0]);
        let row1: Vec<_> = wall.bricks.iter().filter(|b| b.rect.row == 1).collect();
        assert!(row1.iter().all(|b| b.rect.bottom() == 57.0));
        assert!(validate(&wall).is_valid());
    }

    #[test]
    fn deterministic_serialization() {
        let params = realistic(3);
        let spec = WallSpec::new(3000.0, 1000.0, 42);
        let a = wall_to_json(&generate(&spec, &params).unwrap()).unwrap();
        let b = wall_to_json(&generate(&spec, &params).unwrap()).unwrap();
        assert_eq!(a, b);
        let c = wall_to_json(&generate(&WallSpec::new(3000.0, 1000.0, 43), &params).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn json_round_trip() {
        let params = realistic(4);
        let wall = generate(&WallSpec::new(2000.0, 800.0, 5), &params).unwrap();
        let text = wall_to_json(&wall).unwrap();
        let back = wall_from_json(&text).unwrap();
        assert_eq!(back, wall);
        assert_eq!(wall_to_json(&back).unwrap(), text);
        assert!(matches!(wall_from_json("{}"), Err(Error::Schema(_))));
    }

    #[test]
    fn packing_estimate() {
        let params = realistic(11);
        let wall = generate(&WallSpec::new(5000.0, 2000.0, 1), &params).unwrap();
        let p = &params;
        let estimate = 5000.0 * 2000.0
            / ((p.brick_width.mean + p.h_gap.mean) * (p.brick_height.mean + p.v_gap.mean));
        let n = wall.bricks.len() as f64;
        assert!((n - estimate).abs() <= 0.15 * estimate, "{n} bricks vs {estimate}");
    }

    #[test]
    fn spec_too_small() {
        let p = sigma_zero();
        assert!(matches!(generate(&WallSpec::new(300.0, 120.0, 0), &p), Err(Error::SpecTooSmall(_))));
        assert!(matches!(generate(&WallSpec::new(1000.0, 40.0, 0), &p), Err(Error::SpecTooSmall(_))));
        assert!(matches!(generate(&WallSpec::new(-1.0, 40.0, 0), &p), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn derivation_shape() {
        let wall = generate(&WallSpec::new(3000.0, 1000.0, 9), &realistic(9)).unwrap();
        for (i, s) in wall.derivation.iter().enumerate() {
            assert_eq!(s.step, i);
        }
        let mut referenced = vec![0; wall.bricks.len()];
        for s in &wall.derivation {
            if let Some(b) = s.brick {
                referenced[b] += 1;
            }
        }
        assert!(referenced.iter().all(|&c| c == 1));
        for b in &wall.bricks {
            assert_eq!(wall.derivation[b.derivation_step].brick, Some(b.rect.id));
        }
        assert_eq!(wall.derivation[0].rule, StepKind::Rule(RuleId::LabelAssign));
    }

    #[test]
    fn replay_reproduces_bricks() {
        let params = realistic(2);
        for direction in [Heading::Rightward, Heading::Leftward] {
            let spec = WallSpec {
                direction,
                ..WallSpec::new(3000.0, 1000.0, 77)
            };
            let wall = generate(&spec, &params).unwrap();
            assert_eq!(replay_wall(&wall, &params).unwrap(), wall.bricks);
            let mut broken = wall.derivation.clone();
            broken[3].sampled.insert("brick_width".into(), 1.0e6);
            assert!(matches!(replay(&spec, &params, &broken), Err(Error::Replay { .. })));
        }
    }

    /// Per course: lead + widths + joints + open remainder = wall width.
    #[test]
    fn row_length_accounting() {
        let params = realistic(6);
        let wall = generate(&WallSpec::new(3000.0, 1500.0, 12), &params).unwrap();
        let mut length: BTreeMap<usize, f64> = BTreeMap::new();
        let mut lead: BTreeMap<usize, f64> = BTreeMap::new();
        let mut row = 0;
        for s in &wall.derivation {
            if let Some(b) = s.brick {
                let r = wall.bricks[b].rect;
                row = r.row;
                *length.entry(row).or_default() += r.width + s.sampled.get("h_gap").copied().unwrap_or(0.0);
                lead.entry(row).or_insert(r.left());
            }
            if s.rule == StepKind::SkippedEdge {
                *length.entry(row).or_default() += s.sampled["skipped"];
            }
        }
        assert_eq!(length.len(), wall.row_count());
        let mut area = 0.0;
        for (r, len) in &length {
            let total = len + lead[r];
            assert!((total - 3000.0).abs() <= 1e-6 * 3000.0, "row {r}: {total}");
            area += total * wall.bricks.iter().find(|b| b.rect.row == *r).unwrap().rect.height;
        }
        let bricks: f64 = wall.bricks.iter().map(|b| b.rect.area()).sum();
        assert!(bricks < area);
    }

    #[test]
    fn monotone_growth_at_zero_variance() {
        let p = sigma_zero();
        let mut last = 0;
        for w in (500..4000).step_by(137) {
            let n = generate(&WallSpec::new(w as f64, 600.0, 0), &p).unwrap().bricks.len();
            assert!(n >= last, "width {w}");
            last = n;
        }
        last = 0;
        for h in (50..2000).step_by(23) {
            let n = generate(&WallSpec::new(2000.0, h as f64, 0), &p).unwrap().bricks.len();
            assert!(n >= last, "height {h}");
            last = n;
        }
    }

    #[test]
    fn validate_flags_hand_built_faults() {
        let wall = hand_wall(vec![brick(0, 0.0, 0.0, 210.0, 45.0), brick(1, 0.0, 0.0, 210.0, 45.0)], 1000.0, 100.0);
        let report = validate(&wall);
        assert_eq!(report.count(|v| matches!(v, Violation::Overlap { .. })), 1);

        let wall = hand_wall(vec![brick(0, 900.0, 0.0, 1110.0, 45.0)], 1000.0, 100.0);
        let report = validate(&wall);
        assert_eq!(report.violations, vec![Violation::OutOfBounds { brick: 0 }]);

        let wall = hand_wall(vec![brick(0, 0.0, 0.0, 210.0, 45.0), brick(1, 400.0, 9.0, 610.0, 54.0)], 1000.0, 100.0);
        let report = validate(&wall);
        assert_eq!(report.violations.len(), 2);

        let touching = hand_wall(vec![brick(0, 0.0, 0.0, 210.0, 45.0), brick(1, 210.0, 0.0, 420.0, 45.0)], 1000.0, 100.0);
        assert!(validate(&touching).is_valid());
    }

    #[test]
    fn head_joints_match_extracted_gaps() {
        let wall = generate(&WallSpec::new(3000.0, 600.0, 8), &realistic(8)).unwrap();
        let unscaled: Vec<BrickRect> = wall.bricks.iter().filter(|b| !b.scaled).map(|b| b.rect).collect();
        let mut measured = compute_gaps(&unscaled).unwrap().h_gaps;
        let mut recorded: Vec<f64> = wall
            .derivation
            .iter()
            .filter(|s| s.rule == StepKind::Rule(RuleId::PlaceRight))
            .map(|s| s.sampled["h_gap"])
            .collect();
        measured.sort_by(f64::total_cmp);
        recorded.sort_by(f64::total_cmp);
        assert_eq!(measured.len(), recorded.len());
        for (m, r) in measured.iter().zip(&recorded) {
            assert!((m - r).abs() < 1e-9);
        }
    }

    #[test]
    fn synth_single_brick() {
        let wall = hand_wall(vec![brick(0, 0.0, 0.0, 210.0, 45.0)], 300.0, 100.0);
        let pts = synthesize_cloud(&wall, 5.0, 0.0, 1).unwrap();
        assert_eq!(pts.len(), 60 * 20);
        let bricks = pts.iter().filter(|p| p.label == PointClass::Brick).count();
        assert_eq!(bricks, 42 * 9);
        for p in &pts {
            let inside = p.x > 0.0 && p.x < 210.0 && p.y > 0.0 && p.y < 45.0;
            assert_eq!(inside, p.label == PointClass::Brick);
            assert_eq!(p.z, 0.0);
        }
        let noisy = synthesize_cloud(&wall, 5.0, 0.5, 1).unwrap();
        assert_eq!(noisy, synthesize_cloud(&wall, 5.0, 0.5, 1).unwrap());
        assert_ne!(noisy, synthesize_cloud(&wall, 5.0, 0.5, 2).unwrap());
        assert!(synthesize_cloud(&wall, 0.0, 0.5, 1).is_err());
        assert!(synthesize_cloud(&wall, 5.0, -0.5, 1).is_err());
    }

    #[test]
    fn noiseless_cloud_recovers_rects() {
        use crate::extract::{extract_bricks, ExtractOptions, FitMethod};
        use crate::ingest::{fit_wall_plane, project};
        // Edges on the half-pitch lattice so the grid brackets them evenly.
        let wall = hand_wall(
            vec![brick(0, 0.0, 0.0, 210.0, 45.0), brick(1, 220.0, 0.0, 430.0, 45.0), brick(2, 100.0, 55.0, 310.0, 100.0)],
            500.0,
            150.0,
        );
        let cloud = synthesize_cloud(&wall, 5.0, 0.0, 0).unwrap();
        let plane = fit_wall_plane(&cloud).unwrap();
        let projected = project(&cloud, &plane).unwrap();
        let opts = ExtractOptions {
            fit: FitMethod::TrimmedBox { trim: 0.0 },
            ..ExtractOptions::default()
        };
        let got = extract_bricks(&projected, &opts).unwrap();
        assert_eq!(got.rects.len(), 3);
        let mut widths: Vec<f64> = got.rects.iter().map(|r| r.width).collect();
        widths.sort_by(f64::total_cmp);
        for w in widths {
            assert!((w - 210.0).abs() < 1e-4, "{w}");
        }
        for r in &got.rects {
            assert!((r.height - 45.0).abs() < 1e-4);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn generated_walls_are_valid(seed in any::<u64>(), w in 500.0f64..4000.0, h in 120.0f64..1500.0, left in any::<bool>()) {
            let spec = WallSpec {
                direction: if left { Heading::Leftward } else { Heading::Rightward },
                mode: if seed % 2 == 0 { SamplingMode::EmpiricalIndex } else { SamplingMode::GaussianTruncated },
                ..WallSpec::new(w, h, seed)
            };
            let wall = generate(&spec, &realistic(seed % 5)).unwrap();
            let report = validate(&wall);
            prop_assert!(report.is_valid(), "{:?}", report.violations);
        }
    }
}
