//! Deterministic JSON exports: fixed key order, floats rounded to nine
//! significant digits. Used for the field export and every API payload;
//! session files keep full precision instead.

use std::io;

use serde::Serialize;
use serde_json::ser::{CompactFormatter, Formatter};

use crate::error::Result;
use crate::field::{DiscrepancyField, FieldStats, SphericalGridSpec, VoxelDiscrepancy};
use crate::geometry::Point3;
use crate::mitigation::Mitigation;

pub const SIGNIFICANT_DIGITS: usize = 9;

/// Round to [`SIGNIFICANT_DIGITS`] significant digits.
pub fn round_sig(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, v).parse().unwrap_or(v)
}

/// Compact JSON with rounded floats.
#[derive(Debug, Clone, Copy, Default)]
pub struct RoundedFormatter;

impl Formatter for RoundedFormatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        CompactFormatter.write_f64(writer, round_sig(value))
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

pub fn to_rounded_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, RoundedFormatter);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(out).expect("serde_json writes UTF-8"))
}

/// One voxel of the field export.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct VoxelRecord {
    pub azimuth_index: usize,
    pub elevation_index: usize,
    pub centroid1: [f64; 3],
    pub centroid2: [f64; 3],
    pub vector: [f64; 3],
    pub count1: usize,
    pub count2: usize,
}

impl From<&VoxelDiscrepancy> for VoxelRecord {
    fn from(v: &VoxelDiscrepancy) -> Self {
        VoxelRecord {
            azimuth_index: v.azimuth_index,
            elevation_index: v.elevation_index,
            centroid1: xyz(v.centroid1),
            centroid2: xyz(v.centroid2),
            vector: xyz(v.vector),
            count1: v.count1,
            count2: v.count2,
        }
    }
}

pub fn xyz(p: Point3) -> [f64; 3] {
    [p.x, p.y, p.z]
}

/// Grid description with angles in both radians and degrees.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GridRecord {
    pub azimuth_bins: usize,
    pub elevation_bins: usize,
    pub elevation_min: f64,
    pub elevation_max: f64,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    pub origin: [f64; 3],
}

impl From<&SphericalGridSpec> for GridRecord {
    fn from(g: &SphericalGridSpec) -> Self {
        GridRecord {
            azimuth_bins: g.azimuth_bins,
            elevation_bins: g.elevation_bins,
            elevation_min: g.elevation_min,
            elevation_max: g.elevation_max,
            elevation_min_deg: g.elevation_min.to_degrees(),
            elevation_max_deg: g.elevation_max.to_degrees(),
            origin: xyz(g.origin),
        }
    }
}

/// The field export document consumed by the analyst UI.
#[derive(Debug, Clone, Serialize)]
pub struct FieldExport {
    pub iteration: Option<usize>,
    pub mitigations: Vec<Mitigation>,
    pub grid: GridRecord,
    pub min_points: usize,
    pub empty: bool,
    pub voxels: Vec<VoxelRecord>,
    pub stats: FieldStats,
}

impl FieldExport {
    pub fn new(field: &DiscrepancyField, iteration: Option<usize>, mitigations: &[Mitigation]) -> Self {
        FieldExport {
            iteration,
            mitigations: mitigations.to_vec(),
            grid: GridRecord::from(&field.grid),
            min_points: field.min_points,
            empty: field.empty,
            voxels: field.voxels.iter().map(VoxelRecord::from).collect(),
            stats: field.stats,
        }
    }
}

pub fn field_json(field: &DiscrepancyField, iteration: Option<usize>, mitigations: &[Mitigation]) -> Result<String> {
    to_rounded_json(&FieldExport::new(field, iteration, mitigations))
}
