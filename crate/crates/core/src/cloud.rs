//! Point clouds and their text file formats (ASCII PLY and `x,y,z` CSV).
//!
//! A PLY file may carry the capture pose in a header comment:
//!
//! ```text
//! comment sensor_pose <x> <y> <z> <roll> <pitch> <yaw>
//! ```
//!
//! Without it the pose defaults to identity.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, RigidTransform};

/// Ordered lidar returns plus the pose of the sensor that produced them.
///
/// Raw clouds hold points in the sensor frame and the capture pose in the
/// world frame. After registration into another cloud's frame the points and
/// the pose are both expressed in that frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub sensor_pose: RigidTransform,
    pub label: String,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, sensor_pose: RigidTransform, label: impl Into<String>) -> Self {
        Self { points, sensor_pose, label: label.into() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn sensor_origin(&self) -> Point3 {
        self.sensor_pose.translation
    }

    /// Keep the points whose indices are not in `removed` (sorted ascending).
    pub fn without(&self, removed: &[usize]) -> PointCloud {
        let mut skip = removed.iter().peekable();
        let points = self
            .points
            .iter()
            .enumerate()
            .filter_map(|(i, p)| {
                if skip.peek() == Some(&&i) {
                    skip.next();
                    None
                } else {
                    Some(*p)
                }
            })
            .collect();
        PointCloud { points, sensor_pose: self.sensor_pose, label: self.label.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloudFormat {
    PlyAscii,
    XyzCsv,
}

impl CloudFormat {
    /// Guess from the file extension: `.ply` or `.csv`/`.xyz`/`.txt`.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "ply" => Some(CloudFormat::PlyAscii),
            "csv" | "xyz" | "txt" => Some(CloudFormat::XyzCsv),
            _ => None,
        }
    }
}

pub fn load_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_cloud(&bytes, path, format)
}

/// Parse file contents already read from `path` (used for error messages
/// and the default label).
pub fn parse_cloud(bytes: &[u8], path: &Path, format: CloudFormat) -> Result<PointCloud> {
    let name = path.display().to_string();
    let text = std::str::from_utf8(bytes).map_err(|e| parse_err(&name, 0, format!("not UTF-8 text: {e}")))?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut cloud = match format {
        CloudFormat::PlyAscii => parse_ply(text, &name)?,
        CloudFormat::XyzCsv => parse_csv(text, &name)?,
    };
    if cloud.label.is_empty() {
        cloud.label = label;
    }
    Ok(cloud)
}

pub fn save_cloud(cloud: &PointCloud, path: &Path, format: CloudFormat) -> Result<()> {
    let text = match format {
        CloudFormat::PlyAscii => write_ply(cloud),
        CloudFormat::XyzCsv => write_csv(cloud),
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_string(), line, message: message.into() }
}

fn parse_coord(token: &str, path: &str, line: usize) -> Result<f64> {
    let v: f64 = token
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("not a number: {token:?}")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(parse_err(path, line, format!("non-finite coordinate {token:?}")))
    }
}

/// One `x,y,z` triple per line. A first line that does not parse as numbers
/// is treated as a header; blank lines and `#` comments are skipped.
pub fn parse_csv(text: &str, path: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut seen_data = false;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if !seen_data && fields.iter().any(|f| f.trim().parse::<f64>().is_err()) {
            seen_data = true;
            continue;
        }
        seen_data = true;
        if fields.len() != 3 {
            return Err(parse_err(path, line_no, format!("expected 3 fields, found {}", fields.len())));
        }
        points.push(Point3::new(
            parse_coord(fields[0], path, line_no)?,
            parse_coord(fields[1], path, line_no)?,
            parse_coord(fields[2], path, line_no)?,
        ));
    }
    Ok(PointCloud::new(points, RigidTransform::IDENTITY, ""))
}

struct PlyElement {
    name: String,
    count: usize,
    /// Scalar property names in order; `None` marks a list property.
    properties: Vec<Option<String>>,
}

pub fn parse_ply(text: &str, path: &str) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(parse_err(path, 1, "missing 'ply' magic")),
    }

    let mut elements: Vec<PlyElement> = Vec::new();
    let mut pose = RigidTransform::IDENTITY;
    let mut label = String::new();
    let mut header_done = false;
    let mut format_seen = false;

    for (line_no, raw) in lines.by_ref() {
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        match tokens.as_slice() {
            [] => {}
            ["format", "ascii", _] => format_seen = true,
            ["format", other, ..] => {
                return Err(parse_err(path, line_no, format!("unsupported PLY format '{other}'")))
            }
            ["comment", "sensor_pose", rest @ ..] => {
                if rest.len() != 6 {
                    return Err(parse_err(path, line_no, "sensor_pose needs 6 values"));
                }
                let mut v = [0.0; 6];
                for (slot, tok) in v.iter_mut().zip(rest) {
                    *slot = parse_coord(tok, path, line_no)?;
                }
                pose = RigidTransform::from_array(v);
            }
            ["comment", "label", rest @ ..] => label = rest.join(" "),
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| parse_err(path, line_no, format!("bad element count {count:?}")))?;
                elements.push(PlyElement { name: name.to_string(), count, properties: Vec::new() });
            }
            ["property", "list", ..] => match elements.last_mut() {
                Some(el) => el.properties.push(None),
                None => return Err(parse_err(path, line_no, "property before any element")),
            },
            ["property", _ty, name] => match elements.last_mut() {
                Some(el) => el.properties.push(Some(name.to_string())),
                None => return Err(parse_err(path, line_no, "property before any element")),
            },
            ["end_header"] => {
                header_done = true;
                break;
            }
            _ => return Err(parse_err(path, line_no, format!("unrecognized header line {raw:?}"))),
        }
    }
    if !header_done {
        return Err(parse_err(path, text.lines().count(), "missing end_header"));
    }
    if !format_seen {
        return Err(parse_err(path, 2, "missing format line"));
    }

    let mut points = Vec::new();
    let mut found_vertex = false;
    for el in &elements {
        if el.name != "vertex" {
            for _ in 0..el.count {
                if lines.next().is_none() {
                    return Err(parse_err(path, text.lines().count(), format!("truncated '{}' element", el.name)));
                }
            }
            continue;
        }
        found_vertex = true;
        if el.properties.iter().any(Option::is_none) {
            return Err(parse_err(path, 0, "list properties on vertex are not supported"));
        }
        let column = |axis: &str| {
            el.properties
                .iter()
                .position(|p| p.as_deref() == Some(axis))
                .ok_or_else(|| parse_err(path, 0, format!("vertex element has no '{axis}' property")))
        };
        let (cx, cy, cz) = (column("x")?, column("y")?, column("z")?);
        points.reserve(el.count);
        for _ in 0..el.count {
            let (line_no, raw) = lines
                .next()
                .ok_or_else(|| parse_err(path, text.lines().count(), "fewer vertex rows than declared"))?;
            let tokens: Vec<&str> = raw.split_whitespace().collect();
            if tokens.len() != el.properties.len() {
                return Err(parse_err(
                    path,
                    line_no,
                    format!("expected {} values, found {}", el.properties.len(), tokens.len()),
                ));
            }
            points.push(Point3::new(
                parse_coord(tokens[cx], path, line_no)?,
                parse_coord(tokens[cy], path, line_no)?,
                parse_coord(tokens[cz], path, line_no)?,
            ));
        }
    }
    if !found_vertex {
        return Err(parse_err(path, 0, "no vertex element"));
    }
    Ok(PointCloud::new(points, pose, label))
}

pub fn write_ply(cloud: &PointCloud) -> String {
    let p = &cloud.sensor_pose;
    let mut out = String::with_capacity(64 + cloud.points.len() * 48);
    out.push_str("ply\nformat ascii 1.0\n");
    if !cloud.label.is_empty() {
        let _ = writeln!(out, "comment label {}", cloud.label);
    }
    let _ = writeln!(
        out,
        "comment sensor_pose {} {} {} {} {} {}",
        p.translation.x, p.translation.y, p.translation.z, p.roll, p.pitch, p.yaw
    );
    let _ = writeln!(out, "element vertex {}", cloud.points.len());
    out.push_str("property double x\nproperty double y\nproperty double z\nend_header\n");
    for q in &cloud.points {
        let _ = writeln!(out, "{} {} {}", q.x, q.y, q.z);
    }
    out
}

pub fn write_csv(cloud: &PointCloud) -> String {
    let mut out = String::from("x,y,z\n");
    for q in &cloud.points {
        let _ = writeln!(out, "{},{},{}", q.x, q.y, q.z);
    }
    out
}
