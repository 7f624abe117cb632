//! Labeled parametric shape rules for bricklaying.
//!
//! A brick face is a rectangle, so on its own it cannot tell left from right.
//! Two label rules give it a direction and mirror that direction; five
//! placement rules grow a wall course by course:
//!
//! | rule             | effect                                                   |
//! |------------------|----------------------------------------------------------|
//! | `LabelAssign`    | direction `Right`, canonical side tags                   |
//! | `LabelReflect`   | flip direction, swap the left/right side tags            |
//! | `PlaceRight/Left`| translate a new brick past a sampled head joint          |
//! | `EdgeScaleRight/Left` | translate and shrink the last brick flush to the wall end |
//! | `RowSwitch`      | translate up by a bed joint and along by the row stagger |
//!
//! Every rule is a transition on [`GenState`]. Sampled values flow through the
//! state's [`Source`], either a seeded generator or a recorded derivation step,
//! so a derivation can be replayed without touching the generator.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::extract::BrickRect;
use crate::ingest::Point2;
use crate::stats::{sample, GenRng, Param, SamplingMode, WallParameters};

/// Smallest scaled edge brick, as a fraction of the minimum brick width.
pub const MIN_SCALE_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DirectionLabel {
    Left,
    Right,
}

impl DirectionLabel {
    pub fn flipped(self) -> Self {
        match self {
            DirectionLabel::Left => DirectionLabel::Right,
            DirectionLabel::Right => DirectionLabel::Left,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    LeftEdge,
    RightEdge,
    TopEdge,
    BottomEdge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    RefLeft,
    RefRight,
    RefTop,
    RefBottom,
}

impl Tag {
    pub fn name(self) -> &'static str {
        match self {
            Tag::RefLeft => "ref_left",
            Tag::RefRight => "ref_right",
            Tag::RefTop => "ref_top",
            Tag::RefBottom => "ref_bottom",
        }
    }
}

/// Tag carried by each side of a brick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SideTags {
    pub left_edge: Tag,
    pub right_edge: Tag,
    pub top_edge: Tag,
    pub bottom_edge: Tag,
}

impl SideTags {
    pub const CANONICAL: SideTags = SideTags {
        left_edge: Tag::RefLeft,
        right_edge: Tag::RefRight,
        top_edge: Tag::RefTop,
        bottom_edge: Tag::RefBottom,
    };

    pub fn for_direction(direction: DirectionLabel) -> Self {
        match direction {
            DirectionLabel::Right => SideTags::CANONICAL,
            DirectionLabel::Left => SideTags {
                left_edge: Tag::RefRight,
                right_edge: Tag::RefLeft,
                ..SideTags::CANONICAL
            },
        }
    }

    pub fn on(&self, side: Side) -> Tag {
        match side {
            Side::LeftEdge => self.left_edge,
            Side::RightEdge => self.right_edge,
            Side::TopEdge => self.top_edge,
            Side::BottomEdge => self.bottom_edge,
        }
    }

    pub fn side_of(&self, tag: Tag) -> Side {
        [Side::LeftEdge, Side::RightEdge, Side::TopEdge, Side::BottomEdge]
            .into_iter()
            .find(|&s| self.on(s) == tag)
            .expect("every tag sits on one side")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledBrick {
    pub rect: BrickRect,
    pub direction: DirectionLabel,
    pub tags: SideTags,
    /// Set when an edge rule shrank the brick to close a course.
    pub scaled: bool,
    pub derivation_step: usize,
}

impl LabeledBrick {
    /// Coordinate of the edge carrying `tag`: `u` for vertical edges, `v` for
    /// horizontal ones.
    pub fn tag_position(&self, tag: Tag) -> f64 {
        match self.tags.side_of(tag) {
            Side::LeftEdge => self.rect.left(),
            Side::RightEdge => self.rect.right(),
            Side::TopEdge => self.rect.top(),
            Side::BottomEdge => self.rect.bottom(),
        }
    }
}

/// First label rule: gives the brick a direction.
pub fn label_assign(rect: BrickRect) -> LabeledBrick {
    LabeledBrick {
        rect,
        direction: DirectionLabel::Right,
        tags: SideTags::CANONICAL,
        scaled: false,
        derivation_step: 0,
    }
}

/// Second label rule: mirrors the labelling about the brick's vertical axis.
/// The rectangle maps onto itself, so only the labels change.
pub fn label_reflect(brick: &LabeledBrick) -> LabeledBrick {
    let direction = brick.direction.flipped();
    LabeledBrick {
        direction,
        tags: SideTags {
            left_edge: brick.tags.right_edge,
            right_edge: brick.tags.left_edge,
            ..brick.tags
        },
        ..*brick
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RuleId {
    LabelAssign,
    LabelReflect,
    PlaceRight,
    PlaceLeft,
    EdgeScaleRight,
    EdgeScaleLeft,
    RowSwitch,
}

impl RuleId {
    pub const ALL: [RuleId; 7] = [
        RuleId::LabelAssign,
        RuleId::LabelReflect,
        RuleId::PlaceRight,
        RuleId::PlaceLeft,
        RuleId::EdgeScaleRight,
        RuleId::EdgeScaleLeft,
        RuleId::RowSwitch,
    ];
}

/// What a derivation step did: a rule application, or leaving the end of a
/// course open because the space was too narrow for a scaled brick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StepKind {
    Rule(RuleId),
    SkippedEdge,
}

impl fmt::Display for StepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepKind::Rule(r) => write!(f, "{r:?}"),
            StepKind::SkippedEdge => f.write_str("SkippedEdge"),
        }
    }
}

impl Serialize for StepKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StepKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        if name == "SkippedEdge" {
            return Ok(StepKind::SkippedEdge);
        }
        RuleId::ALL
            .into_iter()
            .find(|r| format!("{r:?}") == name)
            .map(StepKind::Rule)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown rule {name:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivationStep {
    pub step: usize,
    pub rule: StepKind,
    pub sampled: BTreeMap<String, f64>,
    pub brick: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Heading {
    #[default]
    #[serde(rename = "right")]
    Rightward,
    #[serde(rename = "left")]
    Leftward,
}

impl Heading {
    fn sign(self) -> f64 {
        match self {
            Heading::Rightward => 1.0,
            Heading::Leftward => -1.0,
        }
    }

    pub fn place_rule(self) -> RuleId {
        match self {
            Heading::Rightward => RuleId::PlaceRight,
            Heading::Leftward => RuleId::PlaceLeft,
        }
    }

    pub fn edge_rule(self) -> RuleId {
        match self {
            Heading::Rightward => RuleId::EdgeScaleRight,
            Heading::Leftward => RuleId::EdgeScaleLeft,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WallBounds {
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
}

impl WallBounds {
    pub fn contains(&self, r: &BrickRect) -> bool {
        r.left() >= self.u_min && r.right() <= self.u_max && r.bottom() >= self.v_min && r.top() <= self.v_max
    }
}

/// Where rule applications take their parameter values from.
#[derive(Debug, Clone)]
pub enum Source {
    Random(Box<GenRng>),
    /// Values recorded for the step about to be applied.
    Replay(BTreeMap<String, f64>),
}

/// Next move chosen by [`GenState::choose_rule`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Choice {
    Apply(RuleId),
    SkipEdge,
    Halt,
}

/// Highest brick top over prior courses, piecewise along `u`.
#[derive(Debug, Clone, Default)]
struct Skyline {
    /// Disjoint `(left, right, top)` intervals sorted by `left`.
    spans: Vec<(f64, f64, f64)>,
}

impl Skyline {
    fn floor_under(&self, left: f64, right: f64) -> f64 {
        self.spans
            .iter()
            .filter(|&&(l, r, _)| l < right && left < r)
            .map(|&(_, _, t)| t)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn highest(&self) -> f64 {
        self.spans.iter().map(|s| s.2).fold(f64::NEG_INFINITY, f64::max)
    }

    fn raise(&mut self, left: f64, right: f64, top: f64) {
        let mut out = Vec::with_capacity(self.spans.len() + 2);
        let mut covered = left;
        for &(l, r, t) in &self.spans {
            if r <= left || l >= right {
                out.push((l, r, t));
                continue;
            }
            if l < left {
                out.push((l, left, t));
            }
            let (a, b) = (l.max(left), r.min(right));
            if a > covered {
                out.push((covered, a, top));
            }
            out.push((a, b, t.max(top)));
            covered = b;
            if r > right {
                out.push((right, r, t));
            }
        }
        if covered < right {
            out.push((covered, right, top));
        }
        out.sort_by(|x, y| x.0.total_cmp(&y.0));
        self.spans = out;
    }
}

/// Wall-generation state rewritten by the rules.
#[derive(Debug, Clone)]
pub struct GenState {
    pub bounds: WallBounds,
    pub heading: Heading,
    pub params: Arc<WallParameters>,
    pub mode: SamplingMode,
    pub placed: Vec<LabeledBrick>,
    /// Index into `placed` of the brick the next rule starts from.
    pub active: Option<usize>,
    pub row_baseline: f64,
    pub row_index: usize,
    /// Bricks already in the current course.
    pub row_len: usize,
    pub row_closed: bool,
    /// Distance from the wall start to the first brick of the current course.
    pub row_lead: f64,
    pub trace: Vec<DerivationStep>,
    /// Course baselines, bottom-up.
    pub baselines: Vec<f64>,
    source: Source,
    pending: BTreeMap<String, f64>,
    skyline: Skyline,
    row_first: usize,
    median_height: f64,
    bond_period: f64,
}

impl GenState {
    pub fn new(bounds: WallBounds, heading: Heading, params: Arc<WallParameters>, mode: SamplingMode, source: Source) -> Self {
        let median_height = params.brick_height.median();
        let bond_period = params.brick_width.median() + params.h_gap.median();
        GenState {
            bounds,
            heading,
            params,
            mode,
            placed: Vec::new(),
            active: None,
            row_baseline: bounds.v_min,
            row_index: 0,
            row_len: 0,
            row_closed: false,
            row_lead: 0.0,
            trace: Vec::new(),
            baselines: Vec::new(),
            source,
            pending: BTreeMap::new(),
            skyline: Skyline::default(),
            row_first: 0,
            median_height,
            bond_period,
        }
    }

    pub fn median_height(&self) -> f64 {
        self.median_height
    }

    /// Median brick width plus median head joint: the running-bond repeat.
    pub fn bond_period(&self) -> f64 {
        self.bond_period
    }

    /// Installs the recorded values for the next replayed step.
    pub fn set_replay_values(&mut self, values: BTreeMap<String, f64>) {
        self.source = Source::Replay(values);
    }

    pub fn active_brick(&self) -> Option<&LabeledBrick> {
        self.active.map(|i| &self.placed[i])
    }

    fn draw(&mut self, p: Param) -> Result<f64> {
        let value = match &mut self.source {
            Source::Random(rng) => sample(self.params.get(p), self.mode, rng),
            Source::Replay(values) => *values.get(p.name()).ok_or_else(|| Error::Replay {
                step: self.trace.len(),
                message: format!("no recorded value for {}", p.name()),
            })?,
        };
        self.pending.insert(p.name().to_string(), value);
        Ok(value)
    }

    /// Values the next draws would produce, without consuming them.
    fn peek(&self, params: &[Param]) -> Option<Vec<f64>> {
        match &self.source {
            Source::Random(rng) => {
                let mut rng = rng.clone();
                Some(params.iter().map(|&p| sample(self.params.get(p), self.mode, &mut rng)).collect())
            }
            Source::Replay(values) => params.iter().map(|p| values.get(p.name()).copied()).collect(),
        }
    }

    fn push_step(&mut self, rule: StepKind, brick: Option<usize>) -> usize {
        let step = self.trace.len();
        self.trace.push(DerivationStep {
            step,
            rule,
            sampled: std::mem::take(&mut self.pending),
            brick,
        });
        step
    }

    /// Runs `body` as one step; on error the state is left untouched.
    fn transaction<T>(&mut self, body: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let source = self.source.clone();
        match body(self) {
            Ok(v) => Ok(v),
            Err(e) => {
                self.source = source;
                self.pending.clear();
                Err(e)
            }
        }
    }

    /// Free length between the active brick and the wall end ahead of it.
    pub fn remaining(&self) -> f64 {
        let Some(active) = self.active_brick() else {
            return 0.0;
        };
        match self.heading {
            Heading::Rightward => self.bounds.u_max - active.rect.right(),
            Heading::Leftward => active.rect.left() - self.bounds.u_min,
        }
    }

    fn wall_start(&self) -> f64 {
        match self.heading {
            Heading::Rightward => self.bounds.u_min,
            Heading::Leftward => self.bounds.u_max,
        }
    }

    fn wall_end(&self) -> f64 {
        match self.heading {
            Heading::Rightward => self.bounds.u_max,
            Heading::Leftward => self.bounds.u_min,
        }
    }

    /// Edge of the active brick facing the direction of growth.
    fn front(&self) -> f64 {
        let r = &self.active_brick().expect("active brick").rect;
        match self.heading {
            Heading::Rightward => r.right(),
            Heading::Leftward => r.left(),
        }
    }

    /// Rectangle of the given width starting at `near` and extending along
    /// the heading, lifted clear of any brick in an earlier course. Width and
    /// height are stored as given so sampled values survive unrounded.
    fn lay(&self, near: f64, width: f64, bottom: f64, height: f64) -> BrickRect {
        let left = match self.heading {
            Heading::Rightward => near,
            Heading::Leftward => near - width,
        };
        let bottom = bottom.max(self.skyline.floor_under(left, left + width));
        BrickRect {
            id: self.placed.len(),
            center: Point2::new(left + width / 2.0, bottom + height / 2.0),
            width,
            height,
            row: self.row_index,
        }
    }

    /// Labels and records a new brick; reflects it on odd course parity.
    fn commit(&mut self, rule: RuleId, rect: BrickRect, scaled: bool) {
        let mut brick = label_assign(BrickRect { row: self.row_index, ..rect });
        brick.scaled = scaled;
        let id = self.placed.len();
        brick.derivation_step = self.push_step(StepKind::Rule(rule), Some(id));
        let parity = (self.row_index + self.row_len) % 2;
        self.placed.push(brick);
        self.active = Some(id);
        self.row_len += 1;
        if parity == 1 {
            self.apply_label_reflect();
        }
    }

    fn apply_label_reflect(&mut self) {
        let i = self.active.expect("active brick");
        self.placed[i] = label_reflect(&self.placed[i]);
        self.push_step(StepKind::Rule(RuleId::LabelReflect), None);
    }

    fn first_row_baseline(&self) -> f64 {
        self.bounds.v_min + (-self.params.level_jitter.min).max(0.0)
    }

    /// Places the first brick of a course `lead` from the wall start. Falls
    /// back to the wall start when the staggered brick would not fit, and
    /// shrinks the brick to the wall width if even that fails.
    fn place_row_start(&mut self, rule: RuleId, lead: f64, width: f64, height: f64, bottom: f64) {
        let span = self.bounds.u_max - self.bounds.u_min;
        let (lead, width, scaled) = if lead + width <= span {
            (lead, width, false)
        } else if width <= span {
            (0.0, width, false)
        } else {
            (0.0, span, true)
        };
        let s = self.heading.sign();
        let near = self.wall_start() + s * lead;
        let rect = self.lay(near, width, bottom, height);
        self.row_lead = lead;
        self.row_first = self.placed.len();
        self.commit(rule, rect, scaled);
    }

    /// Axiom: the first brick, labelled by [`label_assign`], at the sampled
    /// stagger on the first course.
    pub fn start(&mut self) -> Result<()> {
        if self.active.is_some() {
            return Err(Error::GuardFailed(RuleId::LabelAssign));
        }
        let baseline = self.first_row_baseline();
        let p = &self.params;
        if baseline + p.level_jitter.max + p.brick_height.max > self.bounds.v_max {
            return Err(Error::SpecTooSmall("first course does not fit the wall height".into()));
        }
        self.transaction(|s| {
            let o = s.draw(Param::RowOffset)?;
            let w = s.draw(Param::BrickWidth)?;
            let h = s.draw(Param::BrickHeight)?;
            let j = s.draw(Param::LevelJitter)?;
            s.row_baseline = baseline;
            s.baselines.push(baseline);
            let lead = o.rem_euclid(s.bond_period);
            s.place_row_start(RuleId::LabelAssign, lead, w, h, baseline + j);
            Ok(())
        })
    }

    fn place(&mut self, heading: Heading) -> Result<()> {
        let rule = heading.place_rule();
        if heading != self.heading || self.active.is_none() || self.row_closed {
            return Err(Error::GuardFailed(rule));
        }
        self.transaction(|s| {
            let g = s.draw(Param::HGap)?;
            let w = s.draw(Param::BrickWidth)?;
            let h = s.draw(Param::BrickHeight)?;
            let j = s.draw(Param::LevelJitter)?;
            if s.remaining() < g + w {
                return Err(Error::GuardFailed(rule));
            }
            let sign = heading.sign();
            let near = s.front() + sign * g;
            let rect = s.lay(near, w, s.row_baseline + j, h);
            s.commit(rule, rect, false);
            Ok(())
        })
    }

    pub fn place_right(&mut self) -> Result<()> {
        self.place(Heading::Rightward)
    }

    pub fn place_left(&mut self) -> Result<()> {
        self.place(Heading::Leftward)
    }

    fn edge_scale(&mut self, heading: Heading) -> Result<()> {
        let rule = heading.edge_rule();
        if heading != self.heading || self.active.is_none() || self.row_closed {
            return Err(Error::GuardFailed(rule));
        }
        let min_scaled = MIN_SCALE_FRACTION * self.params.brick_width.min;
        self.transaction(|s| {
            let g = s.draw(Param::HGap)?;
            let w = s.draw(Param::BrickWidth)?;
            let h = s.draw(Param::BrickHeight)?;
            let j = s.draw(Param::LevelJitter)?;
            let room = s.remaining() - g;
            if room >= w || room < min_scaled {
                return Err(Error::GuardFailed(rule));
            }
            let near = s.front() + heading.sign() * g;
            let rect = s.lay(near, (s.wall_end() - near).abs(), s.row_baseline + j, h);
            s.commit(rule, rect, true);
            s.row_closed = true;
            Ok(())
        })
    }

    pub fn edge_scale_right(&mut self) -> Result<()> {
        self.edge_scale(Heading::Rightward)
    }

    pub fn edge_scale_left(&mut self) -> Result<()> {
        self.edge_scale(Heading::Leftward)
    }

    /// Closes the course without a brick; the open length is recorded as
    /// `skipped`.
    pub fn skip_edge(&mut self) -> Result<()> {
        if self.active.is_none() || self.row_closed {
            return Err(Error::GuardFailed(self.heading.edge_rule()));
        }
        let open = self.remaining();
        self.pending.insert("skipped".into(), open);
        self.push_step(StepKind::SkippedEdge, None);
        self.row_closed = true;
        Ok(())
    }

    /// Highest possible top of any brick in a course with the given baseline.
    fn course_ceiling(&self, baseline: f64) -> f64 {
        let p = &self.params;
        (baseline + p.level_jitter.max).max(self.skyline_after_close()) + p.brick_height.max
    }

    fn skyline_after_close(&self) -> f64 {
        let current = self.placed[self.row_first..]
            .iter()
            .map(|b| b.rect.top())
            .fold(f64::NEG_INFINITY, f64::max);
        self.skyline.highest().max(current)
    }

    pub fn row_switch(&mut self) -> Result<()> {
        if self.active.is_none() || !self.row_closed {
            return Err(Error::GuardFailed(RuleId::RowSwitch));
        }
        self.transaction(|s| {
            let v = s.draw(Param::VGap)?;
            let o = s.draw(Param::RowOffset)?;
            let w = s.draw(Param::BrickWidth)?;
            let h = s.draw(Param::BrickHeight)?;
            let j = s.draw(Param::LevelJitter)?;
            let baseline = s.row_baseline + s.median_height + v;
            if s.course_ceiling(baseline) > s.bounds.v_max {
                return Err(Error::GuardFailed(RuleId::RowSwitch));
            }
            for b in s.placed[s.row_first..].iter().map(|b| b.rect).collect::<Vec<_>>() {
                s.skyline.raise(b.left(), b.right(), b.top());
            }
            s.row_baseline = baseline;
            s.baselines.push(baseline);
            s.row_index += 1;
            s.row_len = 0;
            s.row_closed = false;
            let lead = (s.row_lead + o).rem_euclid(s.bond_period);
            s.place_row_start(RuleId::RowSwitch, lead, w, h, baseline + j);
            Ok(())
        })
    }

    /// Greedy bottom-up policy. While a course is open: place a full brick if
    /// the next sampled joint and width fit, otherwise a scaled edge brick if
    /// at least a quarter of the minimum width remains, otherwise leave the
    /// end open. Once closed: switch rows if the next course fits, else halt.
    pub fn choose_rule(&self) -> Choice {
        if self.active.is_none() {
            return Choice::Halt;
        }
        if !self.row_closed {
            let Some(next) = self.peek(&[Param::HGap, Param::BrickWidth]) else {
                return Choice::Halt;
            };
            let room = self.remaining() - next[0];
            return if room >= next[1] {
                Choice::Apply(self.heading.place_rule())
            } else if room >= MIN_SCALE_FRACTION * self.params.brick_width.min {
                Choice::Apply(self.heading.edge_rule())
            } else {
                Choice::SkipEdge
            };
        }
        match self.peek(&[Param::VGap]) {
            Some(v) if self.course_ceiling(self.row_baseline + self.median_height + v[0]) <= self.bounds.v_max => {
                Choice::Apply(RuleId::RowSwitch)
            }
            _ => Choice::Halt,
        }
    }

    pub fn apply(&mut self, rule: RuleId) -> Result<()> {
        match rule {
            RuleId::LabelAssign => self.start(),
            RuleId::LabelReflect => {
                if self.active.is_none() {
                    return Err(Error::GuardFailed(rule));
                }
                self.apply_label_reflect();
                Ok(())
            }
            RuleId::PlaceRight => self.place_right(),
            RuleId::PlaceLeft => self.place_left(),
            RuleId::EdgeScaleRight => self.edge_scale_right(),
            RuleId::EdgeScaleLeft => self.edge_scale_left(),
            RuleId::RowSwitch => self.row_switch(),
        }
    }

    /// Applies [`choose_rule`](Self::choose_rule) until it halts.
    pub fn run(&mut self) -> Result<()> {
        loop {
            match self.choose_rule() {
                Choice::Apply(rule) => self.apply(rule)?,
                Choice::SkipEdge => self.skip_edge()?,
                Choice::Halt => return Ok(()),
            }
        }
    }

    pub fn rects(&self) -> impl Iterator<Item = &BrickRect> {
        self.placed.iter().map(|b| &b.rect)
    }
}
