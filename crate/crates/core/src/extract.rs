//! Brick extraction: density clustering of brick-labeled points, rectangle
//! fitting, row grouping and joint measurement.

use std::collections::HashMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Point2, PointClass};

/// Default cluster radius as a multiple of the median point spacing.
pub const EPS_SPACING_FACTOR: f64 = 1.5;
/// Default per-axis quantile trimmed by [`fit_rectangle`].
pub const DEFAULT_TRIM: f64 = 0.02;
pub const DEFAULT_MIN_PTS: usize = 8;
const SPACING_SUBSAMPLE: usize = 1000;
const SPACING_SEED: u64 = 0x5EED_B41C;

/// Axis-aligned brick face in wall coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrickRect {
    pub id: usize,
    pub center: Point2,
    pub width: f64,
    pub height: f64,
    /// Course index counted from the bottom; assigned by [`group_rows`].
    pub row: usize,
}

impl BrickRect {
    pub fn from_edges(id: usize, left: f64, bottom: f64, right: f64, top: f64) -> Self {
        BrickRect {
            id,
            center: Point2::new((left + right) / 2.0, (bottom + top) / 2.0),
            width: right - left,
            height: top - bottom,
            row: 0,
        }
    }

    pub fn left(&self) -> f64 {
        self.center.u - self.width / 2.0
    }

    pub fn right(&self) -> f64 {
        self.center.u + self.width / 2.0
    }

    pub fn bottom(&self) -> f64 {
        self.center.v - self.height / 2.0
    }

    pub fn top(&self) -> f64 {
        self.center.v + self.height / 2.0
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    /// True when the open interiors intersect.
    pub fn overlaps(&self, other: &BrickRect) -> bool {
        self.left() < other.right()
            && other.left() < self.right()
            && self.bottom() < other.top()
            && other.bottom() < self.top()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// Indices into the clustered point slice, ascending.
    pub indices: Vec<usize>,
    pub points: Vec<Point2>,
}

struct DisjointSet {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra as usize] < self.size[rb as usize] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb as usize] = ra;
        self.size[ra as usize] += self.size[rb as usize];
    }
}

type Cell = (i64, i64);

fn cell_of(p: &Point2, size: f64) -> Cell {
    ((p.u / size).floor() as i64, (p.v / size).floor() as i64)
}

/// Points bucketed by square cell; each cell is a contiguous run of `order`.
struct Grid {
    order: Vec<u32>,
    cells: HashMap<Cell, (usize, usize)>,
}

impl Grid {
    fn build(points: &[Point2], size: f64) -> Self {
        let mut keyed: Vec<(Cell, u32)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| (cell_of(p, size), i as u32))
            .collect();
        keyed.sort_unstable();
        let mut cells = HashMap::with_capacity(keyed.len() / 2 + 1);
        let mut start = 0;
        while start < keyed.len() {
            let key = keyed[start].0;
            let mut end = start + 1;
            while end < keyed.len() && keyed[end].0 == key {
                end += 1;
            }
            cells.insert(key, (start, end));
            start = end;
        }
        Grid {
            order: keyed.into_iter().map(|(_, i)| i).collect(),
            cells,
        }
    }

    fn cell(&self, key: Cell) -> &[u32] {
        match self.cells.get(&key) {
            Some(&(s, e)) => &self.order[s..e],
            None => &[],
        }
    }
}

/// Density-connected components: points closer than `eps` are linked and
/// components with fewer than `min_pts` members are dropped as noise.
///
/// Clusters come back ordered by lowest `v`, then lowest `u`; members keep
/// their input order.
pub fn cluster_bricks(points: &[Point2], eps: f64, min_pts: usize) -> Result<Vec<Cluster>> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    if min_pts == 0 {
        return Err(Error::InvalidArgument("min_pts must be at least 1".into()));
    }
    if points.len() > u32::MAX as usize {
        return Err(Error::InvalidArgument("too many points".into()));
    }

    let grid = Grid::build(points, eps);
    let eps2 = eps * eps;
    let mut sets = DisjointSet::new(points.len());
    for (&(cx, cy), &(s, e)) in &grid.cells {
        let here = &grid.order[s..e];
        for (k, &a) in here.iter().enumerate() {
            let pa = &points[a as usize];
            for &b in &here[k + 1..] {
                if pa.distance_squared(&points[b as usize]) <= eps2 {
                    sets.union(a, b);
                }
            }
        }
        // Each unordered cell pair is visited once.
        for (dx, dy) in [(1, -1), (1, 0), (1, 1), (0, 1)] {
            let there = grid.cell((cx + dx, cy + dy));
            if there.is_empty() {
                continue;
            }
            for &a in here {
                let pa = &points[a as usize];
                for &b in there {
                    if pa.distance_squared(&points[b as usize]) <= eps2 {
                        sets.union(a, b);
                    }
                }
            }
        }
    }

    let mut slot_of_root: HashMap<u32, usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in 0..points.len() {
        let root = sets.find(i as u32);
        let slot = *slot_of_root.entry(root).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[slot].push(i);
    }

    let mut clusters: Vec<Cluster> = groups
        .into_iter()
        .filter(|g| g.len() >= min_pts)
        .map(|indices| {
            let points = indices.iter().map(|&i| points[i]).collect();
            Cluster { indices, points }
        })
        .collect();
    if clusters.is_empty() {
        return Err(Error::NoBricksFound);
    }
    let key = |c: &Cluster| {
        let min_v = c.points.iter().map(|p| p.v).fold(f64::INFINITY, f64::min);
        let min_u = c.points.iter().map(|p| p.u).fold(f64::INFINITY, f64::min);
        (min_v, min_u, c.indices[0])
    };
    clusters.sort_by(|a, b| {
        let (ka, kb) = (key(a), key(b));
        ka.0.total_cmp(&kb.0)
            .then(ka.1.total_cmp(&kb.1))
            .then(ka.2.cmp(&kb.2))
    });
    Ok(clusters)
}

/// Median nearest-neighbour distance, measured for a seeded subsample of at
/// most 1000 points against the full set. Coincident points are skipped.
pub fn median_point_spacing(points: &[Point2]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let (mut lo_u, mut lo_v, mut hi_u, mut hi_v) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in points {
        lo_u = lo_u.min(p.u);
        hi_u = hi_u.max(p.u);
        lo_v = lo_v.min(p.v);
        hi_v = hi_v.max(p.v);
    }
    let extent = (hi_u - lo_u).max(hi_v - lo_v);
    if !(extent > 0.0) {
        return None;
    }
    let area = ((hi_u - lo_u) * (hi_v - lo_v)).max(extent * extent / points.len() as f64);
    let size = (area / points.len() as f64).sqrt().max(extent * 1e-9);
    let grid = Grid::build(points, size);
    let max_ring = (extent / size).ceil() as i64 + 1;

    let chosen = subsample(points.len());

    let mut distances: Vec<f64> = chosen
        .into_iter()
        .filter_map(|i| {
            let p = &points[i];
            let (cx, cy) = cell_of(p, size);
            let mut best = f64::INFINITY;
            for ring in 0..=max_ring {
                if best.sqrt() <= (ring - 1).max(0) as f64 * size {
                    break;
                }
                for dx in -ring..=ring {
                    for dy in -ring..=ring {
                        if dx.abs() != ring && dy.abs() != ring {
                            continue;
                        }
                        for &j in grid.cell((cx + dx, cy + dy)) {
                            let d = p.distance_squared(&points[j as usize]);
                            if d > 0.0 && d < best {
                                best = d;
                            }
                        }
                    }
                }
            }
            best.is_finite().then(|| best.sqrt())
        })
        .collect();
    if distances.is_empty() {
        return None;
    }
    Some(median(&mut distances))
}

fn subsample(n: usize) -> Vec<usize> {
    if n <= SPACING_SUBSAMPLE {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(SPACING_SEED);
    let mut picked = index::sample(&mut rng, n, SPACING_SUBSAMPLE).into_vec();
    picked.sort_unstable();
    picked
}

/// Side of the square each point occupies on average, from a Gaussian kernel
/// density (width `nn_spacing`) around a seeded subsample. Unlike the
/// nearest-neighbour distance it is not pulled down by coordinate noise, and
/// on a regular grid the kernel sum matches the area integral, so away from
/// the cloud border the pitch comes out exact.
pub fn sample_pitch(points: &[Point2], nn_spacing: f64) -> f64 {
    let sigma = nn_spacing;
    let reach = 5.0 * sigma;
    if !(sigma > 0.0 && sigma.is_finite()) || points.len() < 2 {
        return nn_spacing;
    }
    let grid = Grid::build(points, reach);
    let r2 = reach * reach;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut pitches: Vec<f64> = subsample(points.len())
        .into_iter()
        .map(|i| {
            let p = &points[i];
            let (cx, cy) = cell_of(p, reach);
            let mut mass = 0.0;
            for dx in -1..=1 {
                for dy in -1..=1 {
                    mass += grid
                        .cell((cx + dx, cy + dy))
                        .iter()
                        .map(|&j| p.distance_squared(&points[j as usize]))
                        .filter(|&d2| d2 <= r2)
                        .map(|d2| (-d2 * inv).exp())
                        .sum::<f64>();
                }
            }
            (2.0 * std::f64::consts::PI * sigma * sigma / mass).sqrt()
        })
        .collect();
    median(&mut pitches)
}

/// Cluster radius from the point spacing of `points`.
pub fn default_eps(points: &[Point2]) -> Result<f64> {
    median_point_spacing(points)
        .map(|s| EPS_SPACING_FACTOR * s)
        .ok_or_else(|| Error::InsufficientData("cannot estimate point spacing".into()))
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn median_of(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.into_iter().collect();
    median(&mut v)
}

fn trimmed_span(mut coords: Vec<f64>, trim: f64) -> (f64, f64) {
    coords.sort_by(f64::total_cmp);
    let k = (trim * coords.len() as f64).floor() as usize;
    let kept = &coords[k..coords.len() - k];
    (kept[0], kept[kept.len() - 1])
}

/// Quantile-trimmed axis-aligned bounding box. Each axis drops its lowest and
/// highest `trim` fraction of coordinates before taking the extent.
pub fn fit_rectangle(cluster: &[Point2], trim: f64) -> Result<BrickRect> {
    fit_rectangle_padded(cluster, trim, 0.0)
}

/// [`fit_rectangle`] grown by `pad` on every side. Sample points sit inside
/// the face, so half the point spacing restores the true edge on average.
pub fn fit_rectangle_padded(cluster: &[Point2], trim: f64, pad: f64) -> Result<BrickRect> {
    if !(0.0..=0.1).contains(&trim) {
        return Err(Error::InvalidArgument(format!("trim must lie in [0, 0.1], got {trim}")));
    }
    if !(pad >= 0.0 && pad.is_finite()) {
        return Err(Error::InvalidArgument(format!("pad must be non-negative, got {pad}")));
    }
    if cluster.len() < 4 {
        return Err(Error::DegenerateCluster(format!(
            "{} points cannot define a rectangle",
            cluster.len()
        )));
    }
    let (left, right) = trimmed_span(cluster.iter().map(|p| p.u).collect(), trim);
    let (bottom, top) = trimmed_span(cluster.iter().map(|p| p.v).collect(), trim);
    if !(right > left && top > bottom) {
        return Err(Error::DegenerateCluster(format!(
            "zero-area box {}x{}",
            right - left,
            top - bottom
        )));
    }
    Ok(BrickRect::from_edges(0, left - pad, bottom - pad, right + pad, top + pad))
}

/// Rectangle from the first two moments of the cluster. For a face sampled on
/// a regular grid of pitch `spacing`, the extent along an axis is
/// `sqrt(12 * variance + spacing^2)`; zero-mean coordinate noise only enters
/// through its variance, which is small next to the brick dimensions.
pub fn fit_rectangle_moments(cluster: &[Point2], spacing: f64) -> Result<BrickRect> {
    if !(spacing >= 0.0 && spacing.is_finite()) {
        return Err(Error::InvalidArgument(format!("spacing must be non-negative, got {spacing}")));
    }
    if cluster.len() < 4 {
        return Err(Error::DegenerateCluster(format!(
            "{} points cannot define a rectangle",
            cluster.len()
        )));
    }
    let n = cluster.len() as f64;
    let mean_u = cluster.iter().map(|p| p.u).sum::<f64>() / n;
    let mean_v = cluster.iter().map(|p| p.v).sum::<f64>() / n;
    let var_u = cluster.iter().map(|p| (p.u - mean_u).powi(2)).sum::<f64>() / n;
    let var_v = cluster.iter().map(|p| (p.v - mean_v).powi(2)).sum::<f64>() / n;
    if !(var_u > 0.0 && var_v > 0.0) {
        return Err(Error::DegenerateCluster("zero spread along an axis".into()));
    }
    let width = (12.0 * var_u + spacing * spacing).sqrt();
    let height = (12.0 * var_v + spacing * spacing).sqrt();
    Ok(BrickRect {
        id: 0,
        center: Point2::new(mean_u, mean_v),
        width,
        height,
        row: 0,
    })
}

/// Smallest share of its padded bounding box a point set must cover to count
/// as one rectangle.
pub const RECT_FILL: f64 = 0.85;

/// Points per `spacing x spacing` cell of the padded bounding box.
fn fill_ratio(points: &[Point2], spacing: f64) -> f64 {
    let (mut u0, mut u1, mut v0, mut v1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        u0 = u0.min(p.u);
        u1 = u1.max(p.u);
        v0 = v0.min(p.v);
        v1 = v1.max(p.v);
    }
    points.len() as f64 * spacing * spacing / ((u1 - u0 + spacing) * (v1 - v0 + spacing))
}

/// Separates bricks that touch across a joint too thin to hold a sample.
///
/// Points are binned into scanlines of height `spacing`, each scanline is cut
/// into runs at gaps wider than 1.5 spacings, and runs on neighbouring
/// scanlines are joined when both ends line up within two spacings. Returns
/// `None` unless the cluster is visibly not a rectangle and every resulting
/// piece is one.
pub fn split_stacked(points: &[Point2], spacing: f64, min_pts: usize) -> Option<Vec<Vec<Point2>>> {
    if !(spacing > 0.0) || points.len() < 2 * min_pts.max(1) || fill_ratio(points, spacing) >= RECT_FILL {
        return None;
    }
    // Scanline phase as the circular mean of v modulo the spacing, so bin
    // edges fall halfway between sample rows.
    let tau = std::f64::consts::TAU;
    let (sin, cos) = points.iter().fold((0.0, 0.0), |(s, c), p| {
        let a = tau * p.v / spacing;
        (s + a.sin(), c + a.cos())
    });
    let phase = sin.atan2(cos) / tau;
    let mut order: Vec<(i64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| ((p.v / spacing - phase).round() as i64, i))
        .collect();
    order.sort_by(|a, b| a.0.cmp(&b.0).then(points[a.1].u.total_cmp(&points[b.1].u)));

    // (scanline, u_lo, u_hi, members)
    let mut runs: Vec<(i64, f64, f64, Vec<usize>)> = Vec::new();
    for &(line, i) in &order {
        let u = points[i].u;
        match runs.last_mut() {
            Some(run) if run.0 == line && u - run.2 <= 1.5 * spacing => {
                run.2 = u;
                run.3.push(i);
            }
            _ => runs.push((line, u, u, vec![i])),
        }
    }

    // Runs on scanline `k` start at `line_start[k - first]`.
    let first = runs[0].0;
    let last = runs[runs.len() - 1].0;
    let mut line_start = vec![runs.len(); (last - first + 2) as usize];
    for (k, r) in runs.iter().enumerate().rev() {
        line_start[(r.0 - first) as usize] = k;
    }
    for k in (0..line_start.len() - 1).rev() {
        line_start[k] = line_start[k].min(line_start[k + 1]);
    }
    let line = |l: i64| -> std::ops::Range<usize> {
        if l < first || l > last {
            return 0..0;
        }
        let i = (l - first) as usize;
        line_start[i]..line_start[i + 1]
    };

    let tol = 2.0 * spacing;
    let aligned = |a: usize, b: usize| (runs[a].1 - runs[b].1).abs() <= tol && (runs[a].2 - runs[b].2).abs() <= tol;
    let mut sets = DisjointSet::new(runs.len());
    // Skipping one scanline bridges a line broken up by noise.
    for (a, run) in runs.iter().enumerate() {
        for step in 1..=2 {
            for b in line(run.0 + step) {
                if aligned(a, b) {
                    sets.union(a as u32, b as u32);
                }
            }
        }
    }
    // A run still alone is a fragment of a broken line: give it to the piece
    // whose run next to it covers it.
    let mut span: HashMap<u32, usize> = HashMap::new();
    for r in runs.iter().enumerate().map(|(k, _)| sets.find(k as u32)) {
        *span.entry(r).or_default() += 1;
    }
    for a in 0..runs.len() {
        if span[&sets.find(a as u32)] > 1 {
            continue;
        }
        let (l, lo, hi) = (runs[a].0, runs[a].1, runs[a].2);
        let host = line(l - 1)
            .chain(line(l + 1))
            .find(|&b| runs[b].1 - tol <= lo && hi <= runs[b].2 + tol);
        if let Some(b) = host {
            sets.union(a as u32, b as u32);
        }
    }

    let mut pieces: Vec<Vec<Point2>> = Vec::new();
    let mut slot: HashMap<u32, usize> = HashMap::new();
    for (k, run) in runs.iter().enumerate() {
        let root = sets.find(k as u32);
        let s = *slot.entry(root).or_insert_with(|| {
            pieces.push(Vec::new());
            pieces.len() - 1
        });
        pieces[s].extend(run.3.iter().map(|&i| points[i]));
    }
    let clean = pieces.len() > 1
        && pieces
            .iter()
            .all(|p| p.len() >= min_pts && fill_ratio(p, spacing) >= RECT_FILL);
    clean.then_some(pieces)
}

/// Sorts by `center.v` and opens a new course wherever consecutive centers are
/// more than half the median brick height apart. Output is ordered by course,
/// then by `center.u`.
pub fn group_rows(rects: &[BrickRect]) -> Vec<BrickRect> {
    if rects.is_empty() {
        return Vec::new();
    }
    let threshold = 0.5 * median_of(rects.iter().map(|r| r.height));
    let mut sorted = rects.to_vec();
    sorted.sort_by(|a, b| {
        a.center
            .v
            .total_cmp(&b.center.v)
            .then(a.center.u.total_cmp(&b.center.u))
            .then(a.id.cmp(&b.id))
    });
    let mut row = 0;
    for i in 0..sorted.len() {
        if i > 0 && sorted[i].center.v - sorted[i - 1].center.v > threshold {
            row += 1;
        }
        sorted[i].row = row;
    }
    sorted.sort_by(|a, b| {
        a.row
            .cmp(&b.row)
            .then(a.center.u.total_cmp(&b.center.u))
            .then(a.id.cmp(&b.id))
    });
    sorted
}

/// Counts of joint candidates rejected as extraction artifacts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapExclusions {
    pub h_gaps: usize,
    pub v_gaps: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GapMeasurements {
    /// Head joints: `next.left - prev.right` for neighbours within a course.
    pub h_gaps: Vec<f64>,
    /// Bed joints: course baseline rise minus the median brick height.
    pub v_gaps: Vec<f64>,
    /// Brick bottom relative to its course baseline (median bottom).
    pub level_jitter: Vec<f64>,
    /// Shift of the first head joint between consecutive courses.
    pub row_offsets: Vec<f64>,
    pub exclusions: GapExclusions,
}

/// Splits a (row, u)-sorted slice into courses.
pub(crate) fn rows_of(rects: &[BrickRect]) -> Vec<Vec<BrickRect>> {
    let mut rows: Vec<Vec<BrickRect>> = Vec::new();
    let mut sorted = rects.to_vec();
    sorted.sort_by(|a, b| a.row.cmp(&b.row).then(a.center.u.total_cmp(&b.center.u)));
    for r in sorted {
        match rows.last_mut() {
            Some(last) if last[0].row == r.row => last.push(r),
            _ => rows.push(vec![r]),
        }
    }
    rows
}

/// Drops negatives and values above three times the candidate median.
fn reject_outliers(candidates: Vec<f64>) -> (Vec<f64>, usize) {
    if candidates.is_empty() {
        return (candidates, 0);
    }
    let limit = 3.0 * median_of(candidates.iter().copied());
    let total = candidates.len();
    let kept: Vec<f64> = candidates.into_iter().filter(|&g| g >= 0.0 && g <= limit).collect();
    let dropped = total - kept.len();
    (kept, dropped)
}

/// Mean bottom of the bricks lying within a quarter brick height of the
/// median bottom. Averaging keeps grid steps out of the level, the window
/// keeps lifted bricks out.
fn course_level(row: &[BrickRect], median_height: f64) -> f64 {
    let centre = median_of(row.iter().map(BrickRect::bottom));
    let window = 0.25 * median_height;
    let near: Vec<f64> = row
        .iter()
        .map(BrickRect::bottom)
        .filter(|b| (b - centre).abs() <= window)
        .collect();
    if near.is_empty() {
        return centre;
    }
    near.iter().sum::<f64>() / near.len() as f64
}

pub fn compute_gaps(rects: &[BrickRect]) -> Result<GapMeasurements> {
    let rows = rows_of(rects);
    let adjacent = rows.windows(2).any(|w| w[1][0].row == w[0][0].row + 1);
    if !adjacent && rows.iter().all(|r| r.len() < 2) {
        return Err(Error::InsufficientData(
            "need a course with two bricks or two adjacent courses".into(),
        ));
    }

    let h_candidates: Vec<f64> = rows
        .iter()
        .flat_map(|row| row.windows(2).map(|w| w[1].left() - w[0].right()))
        .collect();
    let (h_gaps, h_dropped) = reject_outliers(h_candidates);

    let median_height = median_of(rects.iter().map(|r| r.height));
    let baselines: Vec<f64> = rows.iter().map(|row| course_level(row, median_height)).collect();
    let v_candidates: Vec<f64> = rows
        .windows(2)
        .zip(baselines.windows(2))
        .filter(|(pair, _)| pair[1][0].row == pair[0][0].row + 1)
        .map(|(_, b)| b[1] - b[0] - median_height)
        .collect();
    let (v_gaps, v_dropped) = reject_outliers(v_candidates);

    let level_jitter = rows
        .iter()
        .zip(&baselines)
        .flat_map(|(row, &base)| row.iter().map(move |r| r.bottom() - base))
        .collect();

    let first_joint = |row: &[BrickRect]| (row.len() >= 2).then(|| (row[0].right() + row[1].left()) / 2.0);
    let row_offsets = rows
        .windows(2)
        .filter(|pair| pair[1][0].row == pair[0][0].row + 1)
        .filter_map(|pair| Some(first_joint(&pair[1])? - first_joint(&pair[0])?))
        .collect();

    Ok(GapMeasurements {
        h_gaps,
        v_gaps,
        level_jitter,
        row_offsets,
        exclusions: GapExclusions {
            h_gaps: h_dropped,
            v_gaps: v_dropped,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FitMethod {
    /// [`fit_rectangle_padded`] with the given trim fraction.
    TrimmedBox { trim: f64 },
    /// [`fit_rectangle_moments`].
    Moments,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractOptions {
    /// Cluster radius; estimated from point spacing when `None`.
    pub eps: Option<f64>,
    pub min_pts: usize,
    pub fit: FitMethod,
    /// Edge padding for the trimmed box; half the sampling pitch when `None`.
    pub pad: Option<f64>,
    /// Apply [`split_stacked`] to every cluster.
    pub split: bool,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            eps: None,
            min_pts: DEFAULT_MIN_PTS,
            fit: FitMethod::TrimmedBox { trim: DEFAULT_TRIM },
            pad: None,
            split: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub brick_points: usize,
    pub mortar_points: usize,
    pub clusters: usize,
    pub degenerate_clusters: usize,
    /// Clusters separated into several bricks by [`split_stacked`].
    #[serde(default)]
    pub split_clusters: usize,
    pub point_spacing: f64,
    /// Estimated sampling pitch; see [`sample_pitch`].
    #[serde(default)]
    pub sample_pitch: f64,
    pub eps: f64,
    pub gap_exclusions: Option<GapExclusions>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub rects: Vec<BrickRect>,
    pub report: ExtractionReport,
}

/// Clusters the brick points of a projected cloud and returns row-grouped
/// rectangles with ids in cluster order.
pub fn extract_bricks(points: &[(Point2, PointClass)], options: &ExtractOptions) -> Result<Extraction> {
    let bricks: Vec<Point2> = points
        .iter()
        .filter(|(_, c)| *c == PointClass::Brick)
        .map(|(p, _)| *p)
        .collect();
    if bricks.is_empty() {
        return Err(Error::NoBricksFound);
    }
    let spacing = median_point_spacing(&bricks)
        .ok_or_else(|| Error::InsufficientData("cannot estimate point spacing".into()))?;
    let eps = options.eps.unwrap_or(EPS_SPACING_FACTOR * spacing);
    let all: Vec<Point2> = points.iter().map(|(p, _)| *p).collect();
    let pitch = sample_pitch(&all, spacing);
    let clusters = cluster_bricks(&bricks, eps, options.min_pts)?;

    let mut pieces: Vec<Vec<Point2>> = Vec::with_capacity(clusters.len());
    let mut split = 0;
    for cluster in clusters.iter() {
        match options.split.then(|| split_stacked(&cluster.points, pitch, options.min_pts)).flatten() {
            Some(parts) => {
                split += 1;
                pieces.extend(parts);
            }
            None => pieces.push(cluster.points.clone()),
        }
    }

    let mut rects = Vec::with_capacity(pieces.len());
    let mut degenerate = 0;
    for piece in &pieces {
        let fitted = match options.fit {
            FitMethod::TrimmedBox { trim } => fit_rectangle_padded(piece, trim, options.pad.unwrap_or(pitch / 2.0)),
            FitMethod::Moments => fit_rectangle_moments(piece, pitch),
        };
        match fitted {
            Ok(mut rect) => {
                rect.id = rects.len();
                rects.push(rect);
            }
            Err(Error::DegenerateCluster(_)) => degenerate += 1,
            Err(e) => return Err(e),
        }
    }
    if rects.is_empty() {
        return Err(Error::NoBricksFound);
    }
    let rects = group_rows(&rects);
    let gap_exclusions = compute_gaps(&rects).ok().map(|g| g.exclusions);
    Ok(Extraction {
        report: ExtractionReport {
            brick_points: bricks.len(),
            mortar_points: points.len() - bricks.len(),
            clusters: clusters.len(),
            degenerate_clusters: degenerate,
            split_clusters: split,
            point_spacing: spacing,
            sample_pitch: pitch,
            eps,
            gap_exclusions,
        },
        rects,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RectRecord {
    id: usize,
    cu: f64,
    cv: f64,
    width: f64,
    height: f64,
    row: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RectsDocument {
    format_version: u32,
    units: String,
    rects: Vec<RectRecord>,
    exclusions: ExtractionReport,
}

pub const RECTS_FORMAT_VERSION: u32 = 1;

pub fn rects_to_json(extraction: &Extraction) -> Result<String> {
    let doc = RectsDocument {
        format_version: RECTS_FORMAT_VERSION,
        units: "mm".into(),
        rects: extraction
            .rects
            .iter()
            .map(|r| RectRecord {
                id: r.id,
                cu: r.center.u,
                cv: r.center.v,
                width: r.width,
                height: r.height,
                row: r.row,
            })
            .collect(),
        exclusions: extraction.report,
    };
    serde_json::to_string_pretty(&doc).map_err(|e| Error::Schema(e.to_string()))
}

pub fn rects_from_json(text: &str) -> Result<Extraction> {
    let doc: RectsDocument = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    if doc.units != "mm" {
        return Err(Error::Schema(format!("units must be \"mm\", got {:?}", doc.units)));
    }
    let rects = doc
        .rects
        .into_iter()
        .map(|r| {
            if !(r.width > 0.0 && r.height > 0.0) || !r.cu.is_finite() || !r.cv.is_finite() {
                return Err(Error::Schema(format!("rect {} has invalid geometry", r.id)));
            }
            Ok(BrickRect {
                id: r.id,
                center: Point2::new(r.cu, r.cv),
                width: r.width,
                height: r.height,
                row: r.row,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Extraction {
        rects,
        report: doc.exclusions,
    })
}
