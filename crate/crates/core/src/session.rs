//! The iterative inspection loop: a registered cloud pair, a grid, and an
//! ordered history of mitigation passes, each with its recomputed field.
//!
//! Every iteration is recomputed from the raw clouds with its full
//! mitigation list, never by filtering the previous iteration's survivors.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cloud::{parse_cloud, CloudFormat, PointCloud};
use crate::error::{Error, Result};
use crate::field::{compute_field, DiscrepancyField, SphericalGridSpec, VoxelKey};
use crate::geometry::Point3;
use crate::mitigation::{apply_pipeline, Mitigation, MitigationReport, PipelineOutput};
use crate::registration::RegistrationResult;

/// A cloud file the session was built from, pinned by content hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloudRef {
    pub path: PathBuf,
    pub format: CloudFormat,
    pub sha256: String,
}

impl CloudRef {
    /// Read and parse `path`, returning the cloud and a reference pinning the
    /// exact bytes that were parsed.
    pub fn open(path: &Path, format: CloudFormat) -> Result<(CloudRef, PointCloud)> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let cloud = parse_cloud(&bytes, path, format)?;
        let r = CloudRef { path: path.to_path_buf(), format, sha256: sha256_hex(&bytes) };
        Ok((r, cloud))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloudSources {
    pub cloud1: CloudRef,
    pub cloud2: CloudRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Mitigations in effect, in application order.
    pub mitigations: Vec<Mitigation>,
    pub field: DiscrepancyField,
    pub reports: Vec<MitigationReport>,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkedRegion {
    pub label: String,
    pub voxel_keys: Vec<VoxelKey>,
    pub created_at_iteration: usize,
}

/// Magnitudes of a region's voxels in one iteration's field. Voxels the
/// field does not populate are left out.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RegionStats {
    pub iteration: usize,
    pub max_magnitude: f64,
    pub mean_magnitude: f64,
    pub populated_voxels: usize,
    pub total_voxels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    /// Cloud 1 as captured; its sensor frame is the working frame.
    pub cloud1_raw: PointCloud,
    /// Cloud 2 as captured, in its own sensor frame.
    pub cloud2_raw: PointCloud,
    pub sources: Option<CloudSources>,
    pub registration: RegistrationResult,
    pub grid: SphericalGridSpec,
    pub min_points: usize,
    pub iterations: Vec<IterationRecord>,
    pub regions: Vec<MarkedRegion>,
    cloud2_registered: PointCloud,
}

/// On-disk form: everything but the clouds, which are referenced.
#[derive(Serialize, Deserialize)]
struct SessionFile {
    version: u32,
    sources: CloudSources,
    registration: RegistrationResult,
    grid: SphericalGridSpec,
    min_points: usize,
    iterations: Vec<IterationRecord>,
    regions: Vec<MarkedRegion>,
}

const FILE_VERSION: u32 = 1;

impl Session {
    /// A session with no iterations yet. Call [`Session::run_iteration`] with
    /// `None` to record the baseline.
    pub fn new(
        cloud1_raw: PointCloud,
        cloud2_raw: PointCloud,
        registration: RegistrationResult,
        grid: SphericalGridSpec,
        min_points: usize,
    ) -> Result<Self> {
        grid.validate()?;
        registration.transform.validate()?;
        if min_points == 0 {
            return Err(Error::param("min_points must be at least 1"));
        }
        let cloud2_registered = registration.apply(&cloud2_raw);
        Ok(Session {
            cloud1_raw,
            cloud2_raw,
            sources: None,
            registration,
            grid,
            min_points,
            iterations: Vec::new(),
            regions: Vec::new(),
            cloud2_registered,
        })
    }

    pub fn with_sources(mut self, sources: CloudSources) -> Self {
        self.sources = Some(sources);
        self
    }

    /// Cloud 2 in the working frame.
    pub fn cloud2_registered(&self) -> &PointCloud {
        &self.cloud2_registered
    }

    /// Sensor positions of cloud 1 and cloud 2 in the working frame.
    pub fn origins(&self) -> (Point3, Point3) {
        (Point3::ORIGIN, self.registration.transform.translation)
    }

    pub fn latest(&self) -> Option<&IterationRecord> {
        self.iterations.last()
    }

    pub fn iteration(&self, index: usize) -> Result<&IterationRecord> {
        self.iterations.get(index).ok_or(Error::NoSuchIteration(index))
    }

    /// Apply `mitigations` to the raw registered pair.
    pub fn pipeline(&self, mitigations: &[Mitigation]) -> Result<PipelineOutput> {
        let (o1, o2) = self.origins();
        apply_pipeline(&self.cloud1_raw_in_frame(), &self.cloud2_registered, o1, o2, mitigations)
    }

    /// Surviving clouds of a recorded iteration.
    pub fn clouds_at(&self, index: usize) -> Result<PipelineOutput> {
        let mitigations = &self.iteration(index)?.mitigations;
        self.pipeline(mitigations)
    }

    /// Build (without storing) the record for `mitigations`.
    pub fn evaluate(&self, mitigations: Vec<Mitigation>, note: String) -> Result<IterationRecord> {
        let out = self.pipeline(&mitigations)?;
        let field = compute_field(&out.cloud1, &out.cloud2, &self.grid, self.min_points)?;
        Ok(IterationRecord { mitigations, field, reports: out.reports, note })
    }

    /// Extend the in-effect mitigation list by `new_mitigation` (if any),
    /// recompute from the raw clouds and append the record. On a session
    /// with no iterations the unmitigated baseline is recorded first. On
    /// error the session is left unchanged.
    pub fn run_iteration(&mut self, new_mitigation: Option<Mitigation>, note: impl Into<String>) -> Result<&IterationRecord> {
        if let Some(m) = &new_mitigation {
            m.validate()?;
        }
        let note = note.into();
        let mut pending = Vec::new();
        let mut mitigations = match self.iterations.last() {
            Some(last) => last.mitigations.clone(),
            None => {
                if new_mitigation.is_some() {
                    pending.push(self.evaluate(Vec::new(), String::new())?);
                }
                Vec::new()
            }
        };
        mitigations.extend(new_mitigation);
        pending.push(self.evaluate(mitigations, note)?);
        self.iterations.extend(pending);
        Ok(self.iterations.last().expect("just pushed"))
    }

    /// Switch to another grid, recomputing every recorded field. Fails,
    /// leaving the session unchanged, if a marked region does not fit.
    pub fn set_grid(&mut self, grid: SphericalGridSpec) -> Result<()> {
        grid.validate()?;
        for r in &self.regions {
            for k in &r.voxel_keys {
                grid.check_key(*k)?;
            }
        }
        let mut fields = Vec::with_capacity(self.iterations.len());
        for rec in &self.iterations {
            let out = self.pipeline(&rec.mitigations)?;
            fields.push(compute_field(&out.cloud1, &out.cloud2, &grid, self.min_points)?);
        }
        self.grid = grid;
        for (rec, field) in self.iterations.iter_mut().zip(fields) {
            rec.field = field;
        }
        Ok(())
    }

    /// Store a labelled voxel set. Repeated keys are kept once.
    pub fn mark_region(&mut self, label: impl Into<String>, voxel_keys: &[VoxelKey]) -> Result<&MarkedRegion> {
        let mut keys: Vec<VoxelKey> = Vec::with_capacity(voxel_keys.len());
        for k in voxel_keys {
            self.grid.check_key(*k)?;
            if !keys.contains(k) {
                keys.push(*k);
            }
        }
        if keys.is_empty() {
            return Err(Error::param("a region needs at least one voxel"));
        }
        self.regions.push(MarkedRegion {
            label: label.into(),
            voxel_keys: keys,
            created_at_iteration: self.iterations.len().saturating_sub(1),
        });
        Ok(self.regions.last().expect("just pushed"))
    }

    pub fn region_stats(&self, region: &MarkedRegion, iteration: usize) -> Result<RegionStats> {
        let field = &self.iteration(iteration)?.field;
        let mags: Vec<f64> = region
            .voxel_keys
            .iter()
            .filter_map(|k| field.get(*k).map(|v| v.magnitude()))
            .collect();
        let populated = mags.len();
        Ok(RegionStats {
            iteration,
            max_magnitude: mags.iter().copied().fold(0.0, f64::max),
            mean_magnitude: if populated == 0 { 0.0 } else { mags.iter().sum::<f64>() / populated as f64 },
            populated_voxels: populated,
            total_voxels: region.voxel_keys.len(),
        })
    }

    fn cloud1_raw_in_frame(&self) -> PointCloud {
        // cloud 1 already lives in the working frame; only its pose label
        // changes
        PointCloud {
            points: self.cloud1_raw.points.clone(),
            sensor_pose: crate::geometry::RigidTransform::IDENTITY,
            label: self.cloud1_raw.label.clone(),
        }
    }
}

/// Write the session as JSON. Floats are written in shortest round-trip
/// form, so loading gives back identical values.
pub fn save_session(session: &Session, path: &Path) -> Result<()> {
    let sources = session.sources.clone().ok_or(Error::UnbackedSession)?;
    let file = SessionFile {
        version: FILE_VERSION,
        sources,
        registration: session.registration.clone(),
        grid: session.grid,
        min_points: session.min_points,
        iterations: session.iterations.clone(),
        regions: session.regions.clone(),
    };
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    // write beside the target and rename so a crash never leaves half a file
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Read a session and the cloud files it references. Relative cloud paths
/// resolve against the session file's directory.
pub fn load_session(path: &Path) -> Result<Session> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: SessionFile = serde_json::from_str(&text)?;
    if file.version != FILE_VERSION {
        return Err(Error::param(format!("unsupported session file version {}", file.version)));
    }
    let base = path.parent().unwrap_or(Path::new(""));
    let cloud1 = open_verified(&file.sources.cloud1, base)?;
    let cloud2 = open_verified(&file.sources.cloud2, base)?;
    let mut session = Session::new(cloud1, cloud2, file.registration, file.grid, file.min_points)?;
    for r in &file.regions {
        for k in &r.voxel_keys {
            session.grid.check_key(*k)?;
        }
    }
    session.sources = Some(file.sources);
    session.iterations = file.iterations;
    session.regions = file.regions;
    Ok(session)
}

fn open_verified(r: &CloudRef, base: &Path) -> Result<PointCloud> {
    let path = if r.path.is_absolute() { r.path.clone() } else { base.join(&r.path) };
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let actual = sha256_hex(&bytes);
    if actual != r.sha256 {
        return Err(Error::StaleCloudReference { path, expected: r.sha256.clone(), actual });
    }
    parse_cloud(&bytes, &path, r.format)
}
