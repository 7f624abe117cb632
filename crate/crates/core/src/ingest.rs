//! Labeled point-cloud input: parsing, voxel thinning, wall-plane fitting and
//! projection onto 2D wall coordinates.
//!
//! Coordinates are millimeters. Points arrive already classified as brick or
//! mortar; the classifier itself lives upstream of this crate.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PointClass {
    Mortar,
    Brick,
}

impl PointClass {
    fn parse_label(raw: &str) -> Option<Self> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "brick" | "1" => Some(PointClass::Brick),
            "mortar" | "0" => Some(PointClass::Mortar),
            _ => None,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            PointClass::Mortar => "mortar",
            PointClass::Brick => "brick",
        }
    }

    fn code(self) -> u8 {
        match self {
            PointClass::Mortar => 0,
            PointClass::Brick => 1,
        }
    }
}

/// A surveyed point with its brick/mortar class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub label: PointClass,
}

impl LabeledPoint {
    pub fn new(x: f64, y: f64, z: f64, label: PointClass) -> Self {
        LabeledPoint { x, y, z, label }
    }

    fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }
}

/// Position on the wall surface: `u` runs along the wall, `v` points up.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub u: f64,
    pub v: f64,
}

impl Point2 {
    pub fn new(u: f64, v: f64) -> Self {
        Point2 { u, v }
    }

    pub fn distance_squared(&self, other: &Point2) -> f64 {
        let du = self.u - other.u;
        let dv = self.v - other.v;
        du * du + dv * dv
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    AsciiPly,
    Csv,
}

impl CloudFormat {
    /// `.ply` selects PLY, everything else is read as CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("ply") => CloudFormat::AsciiPly,
            _ => CloudFormat::Csv,
        }
    }
}

pub fn parse_point_cloud<R: BufRead>(source: R, format: CloudFormat) -> Result<Vec<LabeledPoint>> {
    let points = match format {
        CloudFormat::Csv => parse_csv(source)?,
        CloudFormat::AsciiPly => parse_ply(source)?,
    };
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(points)
}

fn parse_coord(raw: &str, line: usize, column: &str) -> Result<f64> {
    let value: f64 = raw
        .trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("column {column}: not a number: {raw:?}")))?;
    if !value.is_finite() {
        return Err(Error::parse(line, format!("column {column}: non-finite value")));
    }
    Ok(value)
}

fn parse_csv<R: BufRead>(source: R) -> Result<Vec<LabeledPoint>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(source);

    // Positional layout unless the first record is a header row.
    let mut columns = [0usize, 1, 2, 3];
    let mut points = Vec::new();
    let mut first = true;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::parse(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if first {
            first = false;
            let looks_numeric = record
                .get(0)
                .map(|f| f.parse::<f64>().is_ok())
                .unwrap_or(false);
            if !looks_numeric {
                for (slot, name) in ["x", "y", "z", "label"].iter().enumerate() {
                    columns[slot] = record
                        .iter()
                        .position(|h| h.eq_ignore_ascii_case(name))
                        .ok_or_else(|| Error::parse(line, format!("header lacks column {name:?}")))?;
                }
                continue;
            }
        }
        let field = |slot: usize| {
            record.get(columns[slot]).ok_or_else(|| {
                Error::parse(line, format!("expected at least {} fields", columns[slot] + 1))
            })
        };
        let x = parse_coord(field(0)?, line, "x")?;
        let y = parse_coord(field(1)?, line, "y")?;
        let z = parse_coord(field(2)?, line, "z")?;
        let raw_label = field(3)?;
        let label = PointClass::parse_label(raw_label)
            .ok_or_else(|| Error::parse(line, format!("unknown label {raw_label:?}")))?;
        points.push(LabeledPoint { x, y, z, label });
    }
    Ok(points)
}

struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<String>,
    has_list: bool,
}

fn parse_ply<R: BufRead>(source: R) -> Result<Vec<LabeledPoint>> {
    let mut lines = source.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next_line = move || -> Result<Option<(usize, String)>> {
        match lines.next() {
            Some((n, Ok(text))) => Ok(Some((n, text))),
            Some((_, Err(e))) => Err(Error::Io(e)),
            None => Ok(None),
        }
    };

    match next_line()? {
        Some((_, magic)) if magic.trim() == "ply" => {}
        Some((n, _)) => return Err(Error::parse(n, "missing 'ply' magic")),
        None => return Err(Error::EmptyInput),
    }

    let mut elements: Vec<PlyElement> = Vec::new();
    let mut saw_format = false;
    loop {
        let (n, text) = next_line()?.ok_or_else(|| Error::parse(0, "header not terminated"))?;
        let tokens: Vec<&str> = text.split_whitespace().collect();
        match tokens.as_slice() {
            [] => {}
            ["end_header"] => break,
            ["format", "ascii", _] => saw_format = true,
            ["format", other, ..] => {
                return Err(Error::parse(n, format!("unsupported PLY format {other:?}")))
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| Error::parse(n, format!("bad element count {count:?}")))?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                    has_list: false,
                });
            }
            ["property", "list", _, _, name] => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(n, "property before element"))?;
                element.properties.push(name.to_string());
                element.has_list = true;
            }
            ["property", _, name] => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(n, "property before element"))?;
                element.properties.push(name.to_string());
            }
            _ => return Err(Error::parse(n, format!("unrecognised header line {text:?}"))),
        }
    }
    if !saw_format {
        return Err(Error::parse(1, "missing format line"));
    }

    let mut points = Vec::new();
    let mut found_vertex = false;
    for element in &elements {
        let is_vertex = element.name == "vertex";
        let mut slots = [0usize; 4];
        if is_vertex {
            found_vertex = true;
            if element.has_list {
                return Err(Error::parse(0, "list properties on vertex element are not supported"));
            }
            for (slot, name) in ["x", "y", "z", "label"].iter().enumerate() {
                slots[slot] = element
                    .properties
                    .iter()
                    .position(|p| p == name)
                    .ok_or_else(|| Error::parse(0, format!("vertex element lacks property {name:?}")))?;
            }
            points.reserve(element.count);
        }
        let mut read = 0;
        while read < element.count {
            let (n, text) = next_line()?
                .ok_or_else(|| Error::parse(0, format!("unexpected end of data in element {:?}", element.name)))?;
            let tokens: Vec<&str> = text.split_whitespace().collect();
            if tokens.is_empty() {
                continue;
            }
            read += 1;
            if !is_vertex {
                continue;
            }
            if tokens.len() != element.properties.len() {
                return Err(Error::parse(
                    n,
                    format!("expected {} values, found {}", element.properties.len(), tokens.len()),
                ));
            }
            let x = parse_coord(tokens[slots[0]], n, "x")?;
            let y = parse_coord(tokens[slots[1]], n, "y")?;
            let z = parse_coord(tokens[slots[2]], n, "z")?;
            let raw = tokens[slots[3]];
            let label = match raw.parse::<f64>() {
                Ok(0.0) => PointClass::Mortar,
                Ok(1.0) => PointClass::Brick,
                _ => return Err(Error::parse(n, format!("unknown label {raw:?}"))),
            };
            points.push(LabeledPoint { x, y, z, label });
        }
    }
    if !found_vertex {
        return Err(Error::parse(0, "no vertex element"));
    }
    Ok(points)
}

pub fn write_point_cloud<W: Write>(mut sink: W, points: &[LabeledPoint], format: CloudFormat) -> Result<()> {
    match format {
        CloudFormat::Csv => {
            writeln!(sink, "x,y,z,label")?;
            for p in points {
                writeln!(sink, "{},{},{},{}", p.x, p.y, p.z, p.label.as_str())?;
            }
        }
        CloudFormat::AsciiPly => {
            writeln!(sink, "ply")?;
            writeln!(sink, "format ascii 1.0")?;
            writeln!(sink, "comment units mm")?;
            writeln!(sink, "element vertex {}", points.len())?;
            writeln!(sink, "property double x")?;
            writeln!(sink, "property double y")?;
            writeln!(sink, "property double z")?;
            writeln!(sink, "property uchar label")?;
            writeln!(sink, "end_header")?;
            for p in points {
                writeln!(sink, "{} {} {} {}", p.x, p.y, p.z, p.label.code())?;
            }
        }
    }
    sink.flush()?;
    Ok(())
}

/// Keeps at most one point per cubic voxel of edge `voxel`: the point nearest
/// the centroid of the points sharing its cell, lowest index on ties.
pub fn downsample(points: &[LabeledPoint], voxel: f64) -> Result<Vec<LabeledPoint>> {
    if !(voxel > 0.0 && voxel.is_finite()) {
        return Err(Error::InvalidArgument(format!("voxel must be positive, got {voxel}")));
    }
    let key = |p: &LabeledPoint| {
        (
            (p.x / voxel).floor() as i64,
            (p.y / voxel).floor() as i64,
            (p.z / voxel).floor() as i64,
        )
    };

    let mut cells: HashMap<(i64, i64, i64), (Vector3<f64>, usize)> = HashMap::new();
    for p in points {
        let entry = cells.entry(key(p)).or_insert((Vector3::zeros(), 0));
        entry.0 += p.position();
        entry.1 += 1;
    }

    let mut best: HashMap<(i64, i64, i64), (usize, f64)> = HashMap::with_capacity(cells.len());
    for (i, p) in points.iter().enumerate() {
        let k = key(p);
        let (sum, count) = cells[&k];
        let d = (p.position() - sum / count as f64).norm_squared();
        match best.get(&k) {
            Some(&(_, bd)) if bd <= d => {}
            _ => {
                best.insert(k, (i, d));
            }
        }
    }

    let mut keep = vec![false; points.len()];
    for &(i, _) in best.values() {
        keep[i] = true;
    }
    Ok(points
        .iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then_some(*p))
        .collect())
}

/// Orthonormal frame on the fitted wall surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WallPlane {
    pub origin: Vector3<f64>,
    pub u_axis: Vector3<f64>,
    pub v_axis: Vector3<f64>,
    pub normal: Vector3<f64>,
}

impl WallPlane {
    pub fn is_valid(&self) -> bool {
        const TOL: f64 = 1e-9;
        let unit = |a: &Vector3<f64>| (a.norm() - 1.0).abs() <= TOL;
        self.origin.iter().all(|c| c.is_finite())
            && unit(&self.u_axis)
            && unit(&self.v_axis)
            && unit(&self.normal)
            && self.u_axis.dot(&self.v_axis).abs() <= TOL
            && self.u_axis.dot(&self.normal).abs() <= TOL
            && self.v_axis.dot(&self.normal).abs() <= TOL
    }
}

/// Principal-axes plane fit. The normal is the direction of least variance
/// and the origin the centroid.
///
/// `v` is global up (+z) projected into the plane. Walls lying closer to
/// horizontal than vertical (as synthetic clouds in the z = 0 plane do) use +y
/// as the up reference instead. The normal sign is chosen so that `u` points
/// along +x, or along +y when the wall runs parallel to the y axis.
pub fn fit_wall_plane(points: &[LabeledPoint]) -> Result<WallPlane> {
    if points.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "plane fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let centroid = points.iter().map(LabeledPoint::position).sum::<Vector3<f64>>() / n;
    let mut covariance = Matrix3::zeros();
    for p in points {
        let d = p.position() - centroid;
        covariance += d * d.transpose();
    }
    covariance /= n;

    let eigen = SymmetricEigen::new(covariance);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eigen.eigenvalues[a].total_cmp(&eigen.eigenvalues[b]));
    let (least, middle, largest) = (
        eigen.eigenvalues[order[0]],
        eigen.eigenvalues[order[1]],
        eigen.eigenvalues[order[2]],
    );
    if !(largest > 0.0) || middle <= 1e-12 * largest {
        return Err(Error::DegenerateGeometry("points are collinear or coincident".into()));
    }
    debug_assert!(least <= middle);

    let mut normal: Vector3<f64> = eigen.eigenvectors.column(order[0]).normalize();
    let reference = if normal.z.abs() > std::f64::consts::FRAC_1_SQRT_2 {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let v_axis = (reference - normal * reference.dot(&normal)).normalize();
    let mut u_axis = v_axis.cross(&normal);
    let flip = if u_axis.x.abs() > 1e-9 { u_axis.x < 0.0 } else { u_axis.y < 0.0 };
    if flip {
        normal = -normal;
        u_axis = -u_axis;
    }
    Ok(WallPlane {
        origin: centroid,
        u_axis: u_axis.normalize(),
        v_axis,
        normal,
    })
}

pub fn project(points: &[LabeledPoint], plane: &WallPlane) -> Result<Vec<(Point2, PointClass)>> {
    if !plane.is_valid() {
        return Err(Error::InvalidArgument("wall plane axes are not orthonormal".into()));
    }
    Ok(points
        .iter()
        .map(|p| {
            let d = p.position() - plane.origin;
            (Point2::new(d.dot(&plane.u_axis), d.dot(&plane.v_axis)), p.label)
        })
        .collect())
}

/// Axis-aligned window in wall coordinates, used to drop non-wall regions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropRect {
    pub u0: f64,
    pub v0: f64,
    pub u1: f64,
    pub v1: f64,
}

impl CropRect {
    pub fn new(u0: f64, v0: f64, u1: f64, v1: f64) -> Result<Self> {
        if !(u0 < u1 && v0 < v1) || ![u0, v0, u1, v1].iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "crop window must satisfy u0 < u1 and v0 < v1, got {u0},{v0},{u1},{v1}"
            )));
        }
        Ok(CropRect { u0, v0, u1, v1 })
    }

    pub fn contains(&self, p: &Point2) -> bool {
        p.u >= self.u0 && p.u <= self.u1 && p.v >= self.v0 && p.v <= self.v1
    }
}
