//! Spherical frustum voxelization and per-voxel discrepancy vectors.
//!
//! Each voxel is an azimuth x elevation wedge about the grid origin,
//! unbounded in range. For every voxel holding enough points from both
//! clouds, the discrepancy vector is the cloud-2 centroid minus the cloud-1
//! centroid, with centroids taken in Cartesian coordinates. Bins are
//! half-open, `[low, high)`, and azimuth wraps at 2π.

use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::{cart_to_spherical, Point3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalGridSpec {
    pub azimuth_bins: usize,
    pub elevation_bins: usize,
    /// Radians.
    pub elevation_min: f64,
    /// Radians.
    pub elevation_max: f64,
    pub origin: Point3,
}

impl SphericalGridSpec {
    pub fn new(
        azimuth_bins: usize,
        elevation_bins: usize,
        elevation_min: f64,
        elevation_max: f64,
        origin: Point3,
    ) -> Result<Self> {
        let grid = SphericalGridSpec { azimuth_bins, elevation_bins, elevation_min, elevation_max, origin };
        grid.validate()?;
        Ok(grid)
    }

    /// Grid from degrees, centered on the sensor origin of the reference cloud.
    pub fn from_degrees(azimuth_bins: usize, elevation_bins: usize, el_min_deg: f64, el_max_deg: f64) -> Result<Self> {
        Self::new(azimuth_bins, elevation_bins, el_min_deg.to_radians(), el_max_deg.to_radians(), Point3::ORIGIN)
    }

    pub fn validate(&self) -> Result<()> {
        if self.azimuth_bins == 0 || self.elevation_bins == 0 {
            return Err(Error::param("grid needs at least one bin per axis"));
        }
        if !(self.elevation_min < self.elevation_max)
            || self.elevation_min < -std::f64::consts::FRAC_PI_2
            || self.elevation_max > std::f64::consts::FRAC_PI_2
        {
            return Err(Error::param("grid elevation band must satisfy -π/2 ≤ min < max ≤ π/2"));
        }
        if !self.origin.is_finite() {
            return Err(Error::param("grid origin must be finite"));
        }
        Ok(())
    }

    pub fn azimuth_width(&self) -> f64 {
        TAU / self.azimuth_bins as f64
    }

    pub fn elevation_width(&self) -> f64 {
        (self.elevation_max - self.elevation_min) / self.elevation_bins as f64
    }

    pub fn len(&self) -> usize {
        self.azimuth_bins * self.elevation_bins
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, key: VoxelKey) -> bool {
        key.azimuth_index < self.azimuth_bins && key.elevation_index < self.elevation_bins
    }

    pub fn check_key(&self, key: VoxelKey) -> Result<()> {
        if self.contains(key) {
            Ok(())
        } else {
            Err(Error::InvalidVoxelKey {
                azimuth_index: key.azimuth_index,
                elevation_index: key.elevation_index,
                azimuth_bins: self.azimuth_bins,
                elevation_bins: self.elevation_bins,
            })
        }
    }

    fn flat(&self, key: VoxelKey) -> usize {
        key.azimuth_index * self.elevation_bins + key.elevation_index
    }

    fn unflat(&self, i: usize) -> VoxelKey {
        VoxelKey { azimuth_index: i / self.elevation_bins, elevation_index: i % self.elevation_bins }
    }

    /// Azimuth and elevation bounds `(az_lo, az_hi, el_lo, el_hi)` of a voxel.
    pub fn bounds(&self, key: VoxelKey) -> (f64, f64, f64, f64) {
        let aw = self.azimuth_width();
        let ew = self.elevation_width();
        let az = key.azimuth_index as f64 * aw;
        let el = self.elevation_min + key.elevation_index as f64 * ew;
        (az, az + aw, el, el + ew)
    }
}

/// 36 x 9 grid over a 37.5° band from -25° to +12.5°, for the simulated
/// 80-channel sensor.
pub fn sim_grid() -> SphericalGridSpec {
    SphericalGridSpec::from_degrees(36, 9, -25.0, 12.5).expect("valid preset")
}

/// 36 x 5 grid over -17.5°..+17.5°, for a VLP-16 (±15°).
pub fn vlp16_grid() -> SphericalGridSpec {
    SphericalGridSpec::from_degrees(36, 5, -17.5, 17.5).expect("valid preset")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VoxelKey {
    pub azimuth_index: usize,
    pub elevation_index: usize,
}

impl VoxelKey {
    pub const fn new(azimuth_index: usize, elevation_index: usize) -> Self {
        VoxelKey { azimuth_index, elevation_index }
    }
}

/// Voxel containing `p`, or `None` when `p` is the grid origin or its
/// elevation is outside `[elevation_min, elevation_max)`.
pub fn voxel_of(p: Point3, grid: &SphericalGridSpec) -> Option<VoxelKey> {
    let s = cart_to_spherical(p, grid.origin).ok()?;
    if s.elevation < grid.elevation_min || s.elevation >= grid.elevation_max {
        return None;
    }
    let az = ((s.azimuth / grid.azimuth_width()).floor() as usize).min(grid.azimuth_bins - 1);
    let el = (((s.elevation - grid.elevation_min) / grid.elevation_width()).floor() as usize)
        .min(grid.elevation_bins - 1);
    Some(VoxelKey { azimuth_index: az, elevation_index: el })
}

/// Voxel of every point, in input order.
pub fn assign_voxels(points: &[Point3], grid: &SphericalGridSpec) -> Vec<Option<VoxelKey>> {
    points.par_iter().map(|p| voxel_of(*p, grid)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelDiscrepancy {
    pub azimuth_index: usize,
    pub elevation_index: usize,
    pub centroid1: Point3,
    pub centroid2: Point3,
    /// `centroid2 - centroid1`.
    pub vector: Point3,
    pub count1: usize,
    pub count2: usize,
}

impl VoxelDiscrepancy {
    pub fn key(&self) -> VoxelKey {
        VoxelKey::new(self.azimuth_index, self.elevation_index)
    }

    pub fn magnitude(&self) -> f64 {
        self.vector.norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FieldStats {
    pub max_magnitude: f64,
    pub mean_magnitude: f64,
    pub median_magnitude: f64,
    pub populated_voxels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyField {
    pub grid: SphericalGridSpec,
    pub min_points: usize,
    /// Sorted by key, at most one entry per key.
    pub voxels: Vec<VoxelDiscrepancy>,
    pub stats: FieldStats,
    /// No voxel had enough points from both clouds.
    pub empty: bool,
}

impl DiscrepancyField {
    pub fn get(&self, key: VoxelKey) -> Option<&VoxelDiscrepancy> {
        self.voxels
            .binary_search_by(|v| v.key().cmp(&key))
            .ok()
            .map(|i| &self.voxels[i])
    }

    /// Voxel carrying the largest discrepancy (first one on ties).
    pub fn argmax(&self) -> Option<&VoxelDiscrepancy> {
        self.voxels
            .iter()
            .fold(None, |best: Option<&VoxelDiscrepancy>, v| match best {
                Some(b) if b.magnitude() >= v.magnitude() => Some(b),
                _ => Some(v),
            })
    }
}

#[derive(Clone, Copy, Default)]
struct Accumulator {
    sum: Point3,
    count: usize,
}

fn accumulate(grid: &SphericalGridSpec, points: &[Point3]) -> Vec<Accumulator> {
    let keys = assign_voxels(points, grid);
    let mut acc = vec![Accumulator::default(); grid.len()];
    // sequential pass in point order keeps sums bit-reproducible
    for (p, key) in points.iter().zip(keys) {
        if let Some(k) = key {
            let a = &mut acc[grid.flat(k)];
            a.sum += *p;
            a.count += 1;
        }
    }
    acc
}

/// Discrepancy field between two clouds already expressed in the same frame.
///
/// `min_points` below 1 is treated as 1.
pub fn compute_field(
    cloud1: &PointCloud,
    cloud2_registered: &PointCloud,
    grid: &SphericalGridSpec,
    min_points: usize,
) -> Result<DiscrepancyField> {
    grid.validate()?;
    let min_points = min_points.max(1);
    let acc1 = accumulate(grid, &cloud1.points);
    let acc2 = accumulate(grid, &cloud2_registered.points);

    let voxels: Vec<VoxelDiscrepancy> = acc1
        .iter()
        .zip(&acc2)
        .enumerate()
        .filter(|(_, (a, b))| a.count >= min_points && b.count >= min_points)
        .map(|(i, (a, b))| {
            let key = grid.unflat(i);
            let centroid1 = a.sum / a.count as f64;
            let centroid2 = b.sum / b.count as f64;
            VoxelDiscrepancy {
                azimuth_index: key.azimuth_index,
                elevation_index: key.elevation_index,
                centroid1,
                centroid2,
                vector: centroid2 - centroid1,
                count1: a.count,
                count2: b.count,
            }
        })
        .collect();

    let empty = voxels.is_empty();
    if empty {
        log::warn!("discrepancy field is empty: no voxel holds points from both clouds");
    }
    let mut field = DiscrepancyField { grid: *grid, min_points, voxels, stats: FieldStats::default(), empty };
    field.stats = field_stats(&field);
    Ok(field)
}

pub fn field_stats(field: &DiscrepancyField) -> FieldStats {
    magnitude_stats(field.voxels.iter().map(VoxelDiscrepancy::magnitude).collect())
}

/// Max, mean and median of a set of magnitudes; zeros when empty.
pub fn magnitude_stats(mut magnitudes: Vec<f64>) -> FieldStats {
    let n = magnitudes.len();
    if n == 0 {
        return FieldStats::default();
    }
    magnitudes.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        magnitudes[n / 2]
    } else {
        (magnitudes[n / 2 - 1] + magnitudes[n / 2]) / 2.0
    };
    FieldStats {
        max_magnitude: magnitudes[n - 1],
        mean_magnitude: magnitudes.iter().sum::<f64>() / n as f64,
        median_magnitude: median,
        populated_voxels: n,
    }
}
