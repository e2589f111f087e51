//! Synthetic intersection scene and a ray-cast lidar model.
//!
//! The default scene is a 26 m x 26 m ground plane with three box buildings
//! and one cylinder, all 10 m tall, one per quadrant. The default sensor has
//! 80 channels spaced 0.4° apart starting at -22°, no range noise, and takes
//! the whole revolution as a single instantaneous snapshot.

use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::{direction, Point3, RigidTransform};

/// Smallest ray parameter accepted as a hit; keeps a ray from re-hitting the
/// surface it starts on.
const MIN_HIT_DISTANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenePrimitive {
    /// Rectangle in the z = 0 plane, centered on the origin.
    GroundPlane { extent_x: f64, extent_y: f64 },
    /// Axis-aligned box standing on the ground.
    Box {
        center_x: f64,
        center_y: f64,
        size_x: f64,
        size_y: f64,
        height: f64,
    },
    /// Vertical cylinder standing on the ground.
    Cylinder {
        center_x: f64,
        center_y: f64,
        diameter: f64,
        height: f64,
    },
}

impl ScenePrimitive {
    pub fn validate(&self) -> Result<()> {
        let sizes: &[f64] = match self {
            ScenePrimitive::GroundPlane { extent_x, extent_y } => &[*extent_x, *extent_y],
            ScenePrimitive::Box { size_x, size_y, height, .. } => &[*size_x, *size_y, *height],
            ScenePrimitive::Cylinder { diameter, height, .. } => &[*diameter, *height],
        };
        if sizes.iter().all(|s| s.is_finite() && *s > 0.0) {
            Ok(())
        } else {
            Err(Error::param(format!("primitive sizes must be positive: {self:?}")))
        }
    }

    /// Distance along the ray to the first surface crossing past
    /// [`MIN_HIT_DISTANCE`].
    pub fn intersect(&self, origin: Point3, dir: Point3) -> Option<f64> {
        match *self {
            ScenePrimitive::GroundPlane { extent_x, extent_y } => {
                if dir.z == 0.0 {
                    return None;
                }
                let t = -origin.z / dir.z;
                if t <= MIN_HIT_DISTANCE {
                    return None;
                }
                let hit = origin + dir * t;
                (hit.x.abs() <= extent_x / 2.0 && hit.y.abs() <= extent_y / 2.0).then_some(t)
            }
            ScenePrimitive::Box { center_x, center_y, size_x, size_y, height } => {
                let lo = [center_x - size_x / 2.0, center_y - size_y / 2.0, 0.0];
                let hi = [center_x + size_x / 2.0, center_y + size_y / 2.0, height];
                slab_intersect(origin, dir, lo, hi)
            }
            ScenePrimitive::Cylinder { center_x, center_y, diameter, height } => {
                cylinder_intersect(origin, dir, center_x, center_y, diameter / 2.0, height)
            }
        }
    }

    /// Signed-ish residual of the surface equation at `p`: zero on the
    /// surface, nonzero off it.
    pub fn surface_residual(&self, p: Point3) -> f64 {
        match *self {
            ScenePrimitive::GroundPlane { extent_x, extent_y } => {
                let outside = (p.x.abs() - extent_x / 2.0).max(p.y.abs() - extent_y / 2.0).max(0.0);
                p.z.abs() + outside
            }
            ScenePrimitive::Box { center_x, center_y, size_x, size_y, height } => {
                let dx = (p.x - center_x).abs() - size_x / 2.0;
                let dy = (p.y - center_y).abs() - size_y / 2.0;
                let dz = (p.z - height / 2.0).abs() - height / 2.0;
                dx.max(dy).max(dz)
            }
            ScenePrimitive::Cylinder { center_x, center_y, diameter, height } => {
                let radial = (p.x - center_x).hypot(p.y - center_y) - diameter / 2.0;
                let dz = (p.z - height / 2.0).abs() - height / 2.0;
                radial.max(dz)
            }
        }
    }
}

fn slab_intersect(origin: Point3, dir: Point3, lo: [f64; 3], hi: [f64; 3]) -> Option<f64> {
    let o = [origin.x, origin.y, origin.z];
    let d = [dir.x, dir.y, dir.z];
    let mut t_enter = f64::NEG_INFINITY;
    let mut t_exit = f64::INFINITY;
    for axis in 0..3 {
        if d[axis] == 0.0 {
            if o[axis] < lo[axis] || o[axis] > hi[axis] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[axis];
        let (mut t0, mut t1) = ((lo[axis] - o[axis]) * inv, (hi[axis] - o[axis]) * inv);
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        t_enter = t_enter.max(t0);
        t_exit = t_exit.min(t1);
    }
    if t_exit < t_enter {
        return None;
    }
    if t_enter > MIN_HIT_DISTANCE {
        Some(t_enter)
    } else if t_exit > MIN_HIT_DISTANCE {
        // origin inside the box
        Some(t_exit)
    } else {
        None
    }
}

fn cylinder_intersect(
    origin: Point3,
    dir: Point3,
    cx: f64,
    cy: f64,
    radius: f64,
    height: f64,
) -> Option<f64> {
    let ox = origin.x - cx;
    let oy = origin.y - cy;
    let mut best: Option<f64> = None;
    let mut consider = |t: f64| {
        if t > MIN_HIT_DISTANCE && best.is_none_or(|b| t < b) {
            best = Some(t);
        }
    };

    let a = dir.x * dir.x + dir.y * dir.y;
    if a > 0.0 {
        let half_b = ox * dir.x + oy * dir.y;
        let c = ox * ox + oy * oy - radius * radius;
        let disc = half_b * half_b - a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            // numerically stable root pair
            let q = -(half_b + half_b.signum() * sq);
            let roots = if q != 0.0 { [q / a, c / q] } else { [0.0, 0.0] };
            for t in roots {
                let z = origin.z + dir.z * t;
                if (0.0..=height).contains(&z) {
                    consider(t);
                }
            }
        }
    }
    if dir.z != 0.0 {
        for cap in [0.0, height] {
            let t = (cap - origin.z) / dir.z;
            let x = ox + dir.x * t;
            let y = oy + dir.y * t;
            if x * x + y * y <= radius * radius {
                consider(t);
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Scene {
    pub primitives: Vec<ScenePrimitive>,
}

impl Scene {
    pub fn new(primitives: Vec<ScenePrimitive>) -> Result<Self> {
        let scene = Scene { primitives };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        let grounds = self
            .primitives
            .iter()
            .filter(|p| matches!(p, ScenePrimitive::GroundPlane { .. }))
            .count();
        if grounds > 1 {
            return Err(Error::param("a scene holds at most one ground plane"));
        }
        self.primitives.iter().try_for_each(ScenePrimitive::validate)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let scene: Scene = serde_json::from_str(text)?;
        scene.validate()?;
        Ok(scene)
    }

    /// Same scene with every primitive shifted horizontally; the ground stays
    /// at z = 0.
    pub fn translated_xy(&self, dx: f64, dy: f64) -> Scene {
        let primitives = self
            .primitives
            .iter()
            .map(|p| match *p {
                ScenePrimitive::Box { center_x, center_y, size_x, size_y, height } => {
                    ScenePrimitive::Box { center_x: center_x + dx, center_y: center_y + dy, size_x, size_y, height }
                }
                ScenePrimitive::Cylinder { center_x, center_y, diameter, height } => {
                    ScenePrimitive::Cylinder { center_x: center_x + dx, center_y: center_y + dy, diameter, height }
                }
                ground => ground,
            })
            .collect();
        Scene { primitives }
    }
}

/// Building placement for [`build_default_scene_with`]: `(center_x, center_y)`
/// for the 5x5, 8x5 and 7x5 boxes and the cylinder, in that order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub box_5x5: (f64, f64),
    pub box_8x5: (f64, f64),
    pub box_7x5: (f64, f64),
    pub cylinder: (f64, f64),
}

impl Default for Placement {
    fn default() -> Self {
        Placement {
            box_5x5: (8.5, 8.5),
            box_8x5: (-8.5, 8.5),
            box_7x5: (8.5, -8.5),
            cylinder: (-8.5, -8.5),
        }
    }
}

pub const BUILDING_HEIGHT: f64 = 10.0;
pub const GROUND_EXTENT: f64 = 26.0;
pub const CYLINDER_DIAMETER: f64 = 5.0;

pub fn build_default_scene() -> Scene {
    build_default_scene_with(Placement::default())
}

pub fn build_default_scene_with(at: Placement) -> Scene {
    let building = |(cx, cy): (f64, f64), sx: f64, sy: f64| ScenePrimitive::Box {
        center_x: cx,
        center_y: cy,
        size_x: sx,
        size_y: sy,
        height: BUILDING_HEIGHT,
    };
    Scene {
        primitives: vec![
            ScenePrimitive::GroundPlane { extent_x: GROUND_EXTENT, extent_y: GROUND_EXTENT },
            building(at.box_5x5, 5.0, 5.0),
            building(at.box_8x5, 8.0, 5.0),
            building(at.box_7x5, 7.0, 5.0),
            ScenePrimitive::Cylinder {
                center_x: at.cylinder.0,
                center_y: at.cylinder.1,
                diameter: CYLINDER_DIAMETER,
                height: BUILDING_HEIGHT,
            },
        ],
    }
}

/// Spinning multi-channel lidar. Channels are evenly spaced from
/// `elevation_min` to `elevation_max` inclusive; azimuth steps are evenly
/// spaced over a full turn starting at azimuth 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    pub elevation_channels: usize,
    pub elevation_min: f64,
    pub elevation_max: f64,
    pub azimuth_steps: usize,
    pub max_range: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub noise_seed: u64,
}

impl SensorModel {
    pub fn validate(&self) -> Result<()> {
        if self.elevation_channels == 0 || self.azimuth_steps == 0 {
            return Err(Error::param("sensor needs at least one channel and one azimuth step"));
        }
        if !(self.elevation_min < self.elevation_max) {
            return Err(Error::param("sensor elevation_min must be below elevation_max"));
        }
        if !(self.max_range > 0.0) {
            return Err(Error::param("sensor max_range must be positive"));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::param("sensor noise_sigma must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn channel_spacing(&self) -> f64 {
        if self.elevation_channels > 1 {
            (self.elevation_max - self.elevation_min) / (self.elevation_channels - 1) as f64
        } else {
            0.0
        }
    }

    pub fn azimuth_spacing(&self) -> f64 {
        TAU / self.azimuth_steps as f64
    }

    pub fn channel_elevation(&self, channel: usize) -> f64 {
        self.elevation_min + channel as f64 * self.channel_spacing()
    }

    pub fn step_azimuth(&self, step: usize) -> f64 {
        step as f64 * self.azimuth_spacing()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let sensor: SensorModel = serde_json::from_str(text)?;
        sensor.validate()?;
        Ok(sensor)
    }
}

/// Simulated sensor used for the intersection scene: 80 channels, 0.4°
/// apart from -22°, 720 azimuth steps, noiseless.
pub fn default_sensor_sim() -> SensorModel {
    let channels = 80;
    let min = -22.0_f64;
    let spacing = 0.4_f64;
    SensorModel {
        elevation_channels: channels,
        elevation_min: min.to_radians(),
        elevation_max: (min + spacing * (channels - 1) as f64).to_radians(),
        azimuth_steps: 720,
        max_range: 120.0,
        noise_sigma: 0.0,
        noise_seed: 0,
    }
}

/// Velodyne VLP-16 style sensor: 16 channels over ±15°, 0.2° azimuth steps.
pub fn vlp16_sensor() -> SensorModel {
    SensorModel {
        elevation_channels: 16,
        elevation_min: (-15.0_f64).to_radians(),
        elevation_max: 15.0_f64.to_radians(),
        azimuth_steps: 1800,
        max_range: 100.0,
        noise_sigma: 0.0,
        noise_seed: 0,
    }
}

/// Nearest primitive hit along a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub point: Point3,
    pub range: f64,
    pub primitive: usize,
}

/// First surface hit along a unit-direction ray, if any.
pub fn ray_intersect(scene: &Scene, origin: Point3, dir: Point3) -> Option<RayHit> {
    scene
        .primitives
        .iter()
        .enumerate()
        .filter_map(|(i, prim)| prim.intersect(origin, dir).map(|t| (i, t)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(primitive, range)| RayHit { point: origin + dir * range, range, primitive })
}

/// Cast one ray per (channel, azimuth step) from the sensor at `pose`.
///
/// Points come out in the sensor frame, channel-major then azimuth, and the
/// cloud records `pose` as its sensor pose.
pub fn raycast_cloud(scene: &Scene, pose: &RigidTransform, sensor: &SensorModel) -> Result<PointCloud> {
    sensor.validate()?;
    pose.validate()?;
    let rotation = pose.rotation_matrix();
    let origin = pose.translation;
    let steps = sensor.azimuth_steps;

    let hits: Vec<Option<(Point3, f64)>> = (0..sensor.elevation_channels * steps)
        .into_par_iter()
        .map(|ray| {
            let local = direction(sensor.step_azimuth(ray % steps), sensor.channel_elevation(ray / steps));
            let world = Point3::from_vector(&(rotation * local.to_vector()));
            ray_intersect(scene, origin, world)
                .filter(|hit| hit.range <= sensor.max_range)
                .map(|hit| (local, hit.range))
        })
        .collect();

    let mut noise = if sensor.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, sensor.noise_sigma)
            .map_err(|e| Error::param(format!("noise_sigma: {e}")))?;
        Some((normal, ChaCha8Rng::seed_from_u64(sensor.noise_seed)))
    } else {
        None
    };

    let points = hits
        .into_iter()
        .flatten()
        .map(|(dir, range)| {
            let range = match noise.as_mut() {
                Some((normal, rng)) => range + normal.sample(rng),
                None => range,
            };
            dir * range
        })
        .collect();

    Ok(PointCloud::new(points, *pose, "sim"))
}
