//! Point-pruning filters for known adversities: returns from the collecting
//! vehicle, field-of-view mismatch between vantage points, and shadowing.
//!
//! Filters only ever drop points; survivors keep their order.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::{cart_to_spherical, elevation_from, Point3, SphericalCoord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MitigationKind {
    EgoRemoval,
    FovFilter,
    ShadowFilter,
}

/// One hypothesized-adversity filter with its parameters. Angles in radians,
/// distances in meters. Serialized as `{"kind": ..., "parameters": {...}}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "parameters", rename_all = "snake_case")]
pub enum Mitigation {
    EgoRemoval {
        radius: f64,
    },
    FovFilter {
        elevation_min: f64,
        elevation_max: f64,
        max_range: f64,
    },
    ShadowFilter {
        fine_az_res: f64,
        fine_el_res: f64,
        range_margin: f64,
    },
}

pub const DEFAULT_EGO_RADIUS: f64 = 3.0;
pub const DEFAULT_RANGE_MARGIN: f64 = 0.5;

impl Mitigation {
    pub fn kind(&self) -> MitigationKind {
        match self {
            Mitigation::EgoRemoval { .. } => MitigationKind::EgoRemoval,
            Mitigation::FovFilter { .. } => MitigationKind::FovFilter,
            Mitigation::ShadowFilter { .. } => MitigationKind::ShadowFilter,
        }
    }

    pub fn ego(radius: f64) -> Self {
        Mitigation::EgoRemoval { radius }
    }

    pub fn fov(band: FovBand) -> Self {
        Mitigation::FovFilter {
            elevation_min: band.elevation_min,
            elevation_max: band.elevation_max,
            max_range: band.max_range,
        }
    }

    pub fn shadow(params: ShadowParams) -> Self {
        Mitigation::ShadowFilter {
            fine_az_res: params.fine_az_res,
            fine_el_res: params.fine_el_res,
            range_margin: params.range_margin,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Mitigation::EgoRemoval { radius } => radius.is_finite() && radius > 0.0,
            Mitigation::FovFilter { elevation_min, elevation_max, max_range } => {
                elevation_min.is_finite()
                    && elevation_max.is_finite()
                    && elevation_min < elevation_max
                    && max_range > 0.0
            }
            Mitigation::ShadowFilter { fine_az_res, fine_el_res, range_margin } => {
                fine_az_res.is_finite()
                    && fine_el_res.is_finite()
                    && fine_az_res > 0.0
                    && fine_el_res > 0.0
                    && range_margin.is_finite()
                    && range_margin >= 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::param(format!("invalid mitigation parameters: {self:?}")))
        }
    }

    /// Parse the command-line form, e.g. `ego:radius=3`,
    /// `fov:el_min=-22,el_max=10,max_range=120` or `shadow:margin=0.5`.
    /// Angles are given in degrees; omitted keys take the defaults of the
    /// simulated 80-channel sensor.
    pub fn parse_cli(text: &str) -> Result<Self> {
        let (kind, rest) = text.split_once(':').unwrap_or((text, ""));
        let mut args: HashMap<&str, f64> = HashMap::new();
        for pair in rest.split(',').filter(|s| !s.trim().is_empty()) {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::param(format!("expected key=value, got {pair:?}")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::param(format!("not a number for {k}: {v:?}")))?;
            args.insert(k.trim(), v);
        }
        let mut take = |key: &str, default: f64| args.remove(key).unwrap_or(default);
        let m = match kind.trim() {
            "ego" | "ego_removal" => Mitigation::EgoRemoval { radius: take("radius", DEFAULT_EGO_RADIUS) },
            "fov" | "fov_filter" => {
                let d = FovBand::default();
                Mitigation::FovFilter {
                    elevation_min: take("el_min", d.elevation_min.to_degrees()).to_radians(),
                    elevation_max: take("el_max", d.elevation_max.to_degrees()).to_radians(),
                    max_range: take("max_range", d.max_range),
                }
            }
            "shadow" | "shadow_filter" => {
                let d = ShadowParams::default();
                Mitigation::ShadowFilter {
                    fine_az_res: take("az_res", d.fine_az_res.to_degrees()).to_radians(),
                    fine_el_res: take("el_res", d.fine_el_res.to_degrees()).to_radians(),
                    range_margin: take("margin", d.range_margin),
                }
            }
            other => return Err(Error::param(format!("unknown mitigation kind {other:?}"))),
        };
        if let Some(extra) = args.keys().next() {
            return Err(Error::param(format!("unknown parameter {extra:?} for {kind}")));
        }
        m.validate()?;
        Ok(m)
    }
}

/// Elevation/range coverage of a sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FovBand {
    pub elevation_min: f64,
    pub elevation_max: f64,
    pub max_range: f64,
}

impl Default for FovBand {
    /// Coverage of the simulated 80-channel sensor (-22° to +9.6°, 120 m).
    fn default() -> Self {
        let s = crate::scene::default_sensor_sim();
        FovBand { elevation_min: s.elevation_min, elevation_max: s.elevation_max, max_range: s.max_range }
    }
}

impl FovBand {
    pub fn of_sensor(sensor: &crate::scene::SensorModel) -> Self {
        FovBand {
            elevation_min: sensor.elevation_min,
            elevation_max: sensor.elevation_max,
            max_range: sensor.max_range,
        }
    }

    /// Whether `p` is observable from `origin` under this band. A point at
    /// the origin itself counts as covered.
    /// Band limits get a nano-radian allowance so a ray cast exactly on the
    /// edge channel is not lost to trig round-off.
    pub fn covers(&self, p: Point3, origin: Point3) -> bool {
        const SLACK: f64 = 1e-9;
        match elevation_from(p, origin) {
            None => true,
            Some(el) => {
                el >= self.elevation_min - SLACK
                    && el <= self.elevation_max + SLACK
                    && p.distance(&origin) <= self.max_range * (1.0 + SLACK)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShadowParams {
    pub fine_az_res: f64,
    pub fine_el_res: f64,
    pub range_margin: f64,
}

impl Default for ShadowParams {
    /// Twice the simulated sensor's sample spacing (0.5° azimuth, 0.4°
    /// elevation) and a 0.5 m margin.
    fn default() -> Self {
        ShadowParams::for_sensor(&crate::scene::default_sensor_sim())
    }
}

impl ShadowParams {
    pub fn for_sensor(sensor: &crate::scene::SensorModel) -> Self {
        ShadowParams {
            fine_az_res: 2.0 * sensor.azimuth_spacing(),
            fine_el_res: 2.0 * sensor.channel_spacing(),
            range_margin: DEFAULT_RANGE_MARGIN,
        }
    }
}

/// Survivors of a filter plus the input indices it dropped (ascending).
#[derive(Debug, Clone, PartialEq)]
pub struct Pruned {
    pub cloud: PointCloud,
    pub removed: Vec<usize>,
}

fn prune(cloud: &PointCloud, mut drop: impl FnMut(&Point3) -> bool) -> Pruned {
    let mut kept = Vec::with_capacity(cloud.len());
    let mut removed = Vec::new();
    for (i, p) in cloud.points.iter().enumerate() {
        if drop(p) {
            removed.push(i);
        } else {
            kept.push(*p);
        }
    }
    Pruned {
        cloud: PointCloud { points: kept, sensor_pose: cloud.sensor_pose, label: cloud.label.clone() },
        removed,
    }
}

/// Drop points strictly closer than `radius` to `center`.
pub fn remove_ego(cloud: &PointCloud, center: Point3, radius: f64) -> Result<Pruned> {
    Mitigation::ego(radius).validate()?;
    Ok(prune(cloud, |p| p.distance(&center) < radius))
}

/// Drop points of `cloud_a` that the sensor at `other_origin` could not have
/// observed: elevation outside the band (inclusive bounds) or beyond range.
pub fn fov_filter(cloud_a: &PointCloud, other_origin: Point3, band: &FovBand) -> Result<Pruned> {
    Mitigation::fov(*band).validate()?;
    Ok(prune(cloud_a, |p| !band.covers(*p, other_origin)))
}

/// Returns of one cloud binned on a fine azimuth x elevation grid about a
/// sensor origin. Built once, then only read.
struct RangeImage {
    az_res: f64,
    el_res: f64,
    az_cells: i64,
    cells: HashMap<(i64, i64), Vec<SphericalCoord>>,
}

impl RangeImage {
    fn build(points: &[Point3], origin: Point3, az_res: f64, el_res: f64) -> Self {
        // snap the azimuth cell so that cells tile the full turn
        let az_cells = ((TAU / az_res).round() as i64).max(1);
        let az_res = TAU / az_cells as f64;
        let mut img = RangeImage { az_res, el_res, az_cells, cells: HashMap::new() };
        for p in points {
            if let Ok(s) = cart_to_spherical(*p, origin) {
                let cell = img.cell(s.azimuth, s.elevation);
                img.cells.entry(cell).or_default().push(s);
            }
        }
        img
    }

    fn cell(&self, azimuth: f64, elevation: f64) -> (i64, i64) {
        let a = ((azimuth / self.az_res).floor() as i64).rem_euclid(self.az_cells);
        let e = ((elevation + FRAC_PI_2) / self.el_res).floor() as i64;
        (a, e)
    }

    /// Farthest return whose direction lies within half a cell of `at` on
    /// both axes. `None` unless the window holds returns both at or above and
    /// at or below `at` in elevation: a window touched from one side only
    /// sits on an edge of what the sensor sampled (its last ring before the
    /// range limit, say), not in front of an occluder.
    fn farthest_near(&self, at: &SphericalCoord) -> Option<f64> {
        let (half_az, half_el) = (self.az_res / 2.0, self.el_res / 2.0);
        let (a0, e0) = self.cell(at.azimuth - half_az, at.elevation - half_el);
        let mut farthest: Option<f64> = None;
        let (mut above, mut below) = (false, false);
        for da in 0..2 {
            for de in 0..2 {
                let Some(bucket) = self.cells.get(&((a0 + da).rem_euclid(self.az_cells), e0 + de)) else {
                    continue;
                };
                for s in bucket {
                    let mut daz = (s.azimuth - at.azimuth).abs();
                    if daz > TAU / 2.0 {
                        daz = TAU - daz;
                    }
                    let del = s.elevation - at.elevation;
                    if daz <= half_az && del.abs() <= half_el {
                        above |= del >= 0.0;
                        below |= del <= 0.0;
                        farthest = Some(farthest.map_or(s.range, |f| f.max(s.range)));
                    }
                }
            }
        }
        farthest.filter(|_| above && below)
    }
}

/// Drop points of `cloud_a` that would be hidden from the sensor at
/// `other_origin`, judged from `cloud_b` (the cloud captured there).
///
/// `cloud_b` is binned on a fine angular grid about `other_origin`. For each
/// point of `cloud_a`, the returns of `cloud_b` within half a fine cell of
/// its direction are gathered; if they bracket it in elevation and the point
/// lies more than `range_margin` beyond the farthest of them, the other sensor
/// saw a surface in front of it and the point is dropped. Directions with no
/// `cloud_b` returns leave `cloud_a` untouched.
pub fn shadow_filter(
    cloud_a: &PointCloud,
    cloud_b: &PointCloud,
    other_origin: Point3,
    params: &ShadowParams,
) -> Result<Pruned> {
    Mitigation::shadow(*params).validate()?;
    let image = RangeImage::build(&cloud_b.points, other_origin, params.fine_az_res, params.fine_el_res);
    let hidden: Vec<bool> = cloud_a
        .points
        .par_iter()
        .map(|p| match cart_to_spherical(*p, other_origin) {
            Ok(s) => image
                .farthest_near(&s)
                .is_some_and(|depth| s.range > depth + params.range_margin),
            Err(_) => false,
        })
        .collect();
    let mut flags = hidden.into_iter();
    Ok(prune(cloud_a, |_| flags.next().unwrap_or(false)))
}

/// What one pipeline step removed, as indices into the raw (unfiltered)
/// clouds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationReport {
    pub kind: MitigationKind,
    pub removed_from_cloud1: usize,
    pub removed_from_cloud2: usize,
    pub removed_indices1: Vec<usize>,
    pub removed_indices2: Vec<usize>,
}

/// Output of [`apply_pipeline`].
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub cloud1: PointCloud,
    pub cloud2: PointCloud,
    pub reports: Vec<MitigationReport>,
}

/// Apply `mitigations` in order to both clouds, which must share a frame.
/// `origin1`/`origin2` are the sensor positions in that frame.
///
/// Ego removal works about each cloud's own origin; the field-of-view and
/// shadow filters test each cloud against the other sensor. Both sides of a
/// step see the clouds as they were before that step.
pub fn apply_pipeline(
    cloud1: &PointCloud,
    cloud2: &PointCloud,
    origin1: Point3,
    origin2: Point3,
    mitigations: &[Mitigation],
) -> Result<PipelineOutput> {
    for m in mitigations {
        m.validate()?;
    }
    let mut c1 = cloud1.clone();
    let mut c2 = cloud2.clone();
    // raw index of each surviving point
    let mut raw1: Vec<usize> = (0..c1.len()).collect();
    let mut raw2: Vec<usize> = (0..c2.len()).collect();
    let mut reports = Vec::with_capacity(mitigations.len());
    for m in mitigations {
        let (p1, p2) = match *m {
            Mitigation::EgoRemoval { radius } => (remove_ego(&c1, origin1, radius)?, remove_ego(&c2, origin2, radius)?),
            Mitigation::FovFilter { elevation_min, elevation_max, max_range } => {
                let band = FovBand { elevation_min, elevation_max, max_range };
                (fov_filter(&c1, origin2, &band)?, fov_filter(&c2, origin1, &band)?)
            }
            Mitigation::ShadowFilter { fine_az_res, fine_el_res, range_margin } => {
                let params = ShadowParams { fine_az_res, fine_el_res, range_margin };
                (shadow_filter(&c1, &c2, origin2, &params)?, shadow_filter(&c2, &c1, origin1, &params)?)
            }
        };
        let removed_indices1 = take_removed(&mut raw1, &p1.removed);
        let removed_indices2 = take_removed(&mut raw2, &p2.removed);
        log::debug!("{:?}: removed {} / {}", m.kind(), removed_indices1.len(), removed_indices2.len());
        reports.push(MitigationReport {
            kind: m.kind(),
            removed_from_cloud1: removed_indices1.len(),
            removed_from_cloud2: removed_indices2.len(),
            removed_indices1,
            removed_indices2,
        });
        c1 = p1.cloud;
        c2 = p2.cloud;
    }
    Ok(PipelineOutput { cloud1: c1, cloud2: c2, reports })
}

/// Remove positions `removed` (ascending) from `raw`, returning their raw
/// indices.
fn take_removed(raw: &mut Vec<usize>, removed: &[usize]) -> Vec<usize> {
    let out: Vec<usize> = removed.iter().map(|&i| raw[i]).collect();
    let mut k = 0;
    let mut pos = 0;
    raw.retain(|_| {
        let drop = k < removed.len() && removed[k] == pos;
        if drop {
            k += 1;
        }
        pos += 1;
        !drop
    });
    out
}
