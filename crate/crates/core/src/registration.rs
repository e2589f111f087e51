//! Bring cloud 2 into cloud 1's frame, either from known capture poses or by
//! point-to-point ICP.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::{Point3, RigidTransform};
use crate::spatial::SpatialHash;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegistrationMethod {
    Truth,
    Icp,
}

/// `transform` maps cloud-2 coordinates into cloud-1 coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    pub transform: RigidTransform,
    pub method: RegistrationMethod,
    /// ICP updates accepted; 0 for truth registration.
    pub iterations: usize,
    /// Truncated RMS correspondence distance at the returned transform (m).
    pub final_residual: f64,
    pub converged: bool,
    /// Residual at the initial guess followed by one entry per accepted update.
    #[serde(default)]
    pub residual_trace: Vec<f64>,
}

impl RegistrationResult {
    pub fn truth(transform: RigidTransform) -> Self {
        RegistrationResult {
            transform,
            method: RegistrationMethod::Truth,
            iterations: 0,
            final_residual: 0.0,
            converged: true,
            residual_trace: Vec::new(),
        }
    }

    /// Cloud 2 re-expressed in cloud 1's frame. The registered cloud's sensor
    /// pose becomes the pose of sensor 2 in that frame.
    pub fn apply(&self, cloud2: &PointCloud) -> PointCloud {
        PointCloud {
            points: self.transform.apply_all(&cloud2.points),
            sensor_pose: self.transform,
            label: cloud2.label.clone(),
        }
    }
}

/// Register with exact capture poses: `T = pose1⁻¹ ∘ pose2`.
pub fn register_with_truth(
    cloud2: &PointCloud,
    pose1: &RigidTransform,
    pose2: &RigidTransform,
) -> Result<(PointCloud, RegistrationResult)> {
    pose1.validate()?;
    pose2.validate()?;
    let result = RegistrationResult::truth(pose1.inverse().compose(pose2));
    Ok((result.apply(cloud2), result))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcpParams {
    pub max_iter: usize,
    /// Stop once an update moves less than this (translation norm plus
    /// rotation angle).
    pub tol: f64,
    pub max_corr_dist: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        IcpParams { max_iter: 60, tol: 1e-6, max_corr_dist: 1.0 }
    }
}

struct Evaluation {
    residual: f64,
    pairs: Vec<(Point3, Point3)>,
}

/// Truncated cost: each cloud-2 point contributes its squared nearest
/// distance, capped at `max_corr_dist²` when nothing is in reach. With the
/// cap, every ICP step is non-increasing in this cost.
fn evaluate(
    index: &SpatialHash,
    target: &[Point3],
    source: &[Point3],
    t: &RigidTransform,
    max_corr: f64,
) -> Evaluation {
    let moved = t.apply_all(source);
    let found: Vec<Option<(Point3, Point3, f64)>> = moved
        .par_iter()
        .map(|p| {
            index
                .nearest_within(p, max_corr)
                .map(|(j, d2)| (*p, target[j], d2))
        })
        .collect();
    let cap = max_corr * max_corr;
    let mut sum = 0.0;
    let mut pairs = Vec::with_capacity(found.len());
    for f in found {
        match f {
            Some((p, q, d2)) => {
                sum += d2;
                pairs.push((p, q));
            }
            None => sum += cap,
        }
    }
    Evaluation { residual: (sum / source.len() as f64).sqrt(), pairs }
}

/// Least-squares rigid motion taking each `pair.0` onto `pair.1`.
pub fn best_fit_transform(pairs: &[(Point3, Point3)]) -> RigidTransform {
    let n = pairs.len() as f64;
    let (mut cs, mut ct) = (Point3::ORIGIN, Point3::ORIGIN);
    for (s, t) in pairs {
        cs += *s;
        ct += *t;
    }
    let (cs, ct) = (cs / n, ct / n);
    if pairs.len() < 3 {
        return RigidTransform::from_translation(ct - cs);
    }
    let mut h = Matrix3::<f64>::zeros();
    for (s, t) in pairs {
        h += (*s - cs).to_vector() * (*t - ct).to_vector().transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return RigidTransform::from_translation(ct - cs),
    };
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let t = ct.to_vector() - r * cs.to_vector();
    RigidTransform::from_matrix(&r, Point3::from_vector(&t))
}

fn update_size(delta: &RigidTransform) -> f64 {
    let r = delta.rotation_matrix();
    let angle = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
    delta.translation.norm() + angle
}

/// Point-to-point ICP estimating the transform that maps `cloud2` onto
/// `cloud1`, starting from `init`.
///
/// A step that would raise the residual (floating-point noise near the
/// optimum) ends the run and the last accepted transform is returned, so
/// `residual_trace` is non-increasing. Running out of iterations is reported
/// through `converged`, not as an error.
pub fn icp_register(
    cloud1: &PointCloud,
    cloud2: &PointCloud,
    init: &RigidTransform,
    params: &IcpParams,
) -> Result<RegistrationResult> {
    if cloud1.is_empty() || cloud2.is_empty() {
        return Err(Error::RegistrationFailed("both clouds must be non-empty".into()));
    }
    if !(params.max_corr_dist > 0.0) || !params.max_corr_dist.is_finite() || !(params.tol >= 0.0) {
        return Err(Error::param(format!("bad ICP parameters {params:?}")));
    }
    init.validate()?;

    let index = SpatialHash::build(&cloud1.points, params.max_corr_dist);
    let mut transform = *init;
    let mut eval = evaluate(&index, &cloud1.points, &cloud2.points, &transform, params.max_corr_dist);
    if eval.pairs.is_empty() {
        return Err(Error::RegistrationFailed(format!(
            "no correspondences within {} m",
            params.max_corr_dist
        )));
    }
    let mut trace = vec![eval.residual];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < params.max_iter {
        let delta = best_fit_transform(&eval.pairs);
        let candidate = delta.compose(&transform);
        let next = evaluate(&index, &cloud1.points, &cloud2.points, &candidate, params.max_corr_dist);
        if next.pairs.is_empty() || next.residual > eval.residual {
            converged = true;
            break;
        }
        transform = candidate;
        eval = next;
        trace.push(eval.residual);
        iterations += 1;
        if update_size(&delta) < params.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("ICP stopped after {iterations} iterations without meeting tol {}", params.tol);
    }

    Ok(RegistrationResult {
        transform,
        method: RegistrationMethod::Icp,
        iterations,
        final_residual: eval.residual,
        converged,
        residual_trace: trace,
    })
}
