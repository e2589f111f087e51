//! Discrepancy-vector fields between registered lidar point clouds.
//!
//! The crate covers the whole offline loop: simulate or load two clouds,
//! register cloud 2 into cloud 1's frame, bin both on a spherical frustum
//! grid, difference the per-voxel centroids, then prune hypothesized
//! adversities and recompute.

// parameter checks written as `!(a < b)` also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cloud;
pub mod error;
pub mod export;
pub mod field;
pub mod geometry;
pub mod mitigation;
pub mod registration;
pub mod scene;
pub mod session;
pub mod spatial;

pub use cloud::{load_cloud, save_cloud, CloudFormat, PointCloud};
pub use error::{Error, Result};
pub use field::{compute_field, field_stats, voxel_of, DiscrepancyField, FieldStats, SphericalGridSpec, VoxelDiscrepancy, VoxelKey};
pub use geometry::{cart_to_spherical, Point3, RigidTransform, SphericalCoord};
pub use mitigation::{
    apply_pipeline, fov_filter, remove_ego, shadow_filter, FovBand, Mitigation, MitigationKind, MitigationReport,
    PipelineOutput, ShadowParams,
};
pub use registration::{icp_register, register_with_truth, IcpParams, RegistrationMethod, RegistrationResult};
pub use scene::{build_default_scene, default_sensor_sim, ray_intersect, raycast_cloud, Scene, ScenePrimitive, SensorModel};
pub use session::{load_session, save_session, CloudRef, CloudSources, IterationRecord, MarkedRegion, RegionStats, Session};
