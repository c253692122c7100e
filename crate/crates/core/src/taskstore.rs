//! File-based store of taught tasks: one directory per task holding a JSON
//! manifest, the reference cloud (PLY) and the taught path (JSON).

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Pose6D, RigidTransform};
use crate::ipe::check_reachable;
use crate::pathlearn::{PathError, ReferencePath};
use crate::pointcloud::{load_ply, save_ply, ColoredPointCloud, PlyError};
use crate::sim::{SimError, WorldState};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "task.json";
const CLOUD_FILE: &str = "cloud.ply";
const PATH_FILE: &str = "path.json";

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("task id `{0}` is not a valid directory name")]
    InvalidTaskId(String),
    #[error("no manifest at {0}")]
    MissingManifest(PathBuf),
    #[error("manifest {path}: {reason}")]
    Schema { path: PathBuf, reason: String },
    #[error("manifest schema version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("manifest references missing cloud {0}")]
    DanglingCloud(PathBuf),
    #[error("manifest references missing path file {0}")]
    DanglingPath(PathBuf),
    #[error("sampling pose is outside the workspace (|t| = {distance} m > {radius} m)")]
    Unreachable { distance: f64, radius: f64 },
    #[error("reference cloud is empty")]
    EmptyCloud,
    #[error(transparent)]
    Ply(#[from] PlyError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Everything recorded once at teaching time. The reference cloud lives in
/// memory here and in `cloud.ply` on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskRecord {
    pub task_id: String,
    /// Base pose in the world frame at teaching time.
    pub parking_location: Pose6D,
    pub reference_cloud: ColoredPointCloud,
    pub reference_path: ReferencePath,
    /// Camera pose in the base frame at the sampling configuration.
    pub extrinsic_teach: RigidTransform,
    pub created_at: DateTime<Utc>,
}

impl TaskRecord {
    /// Field-wise equality with transforms compared to `tol` (they are
    /// stored as Euler angles) and exact equality elsewhere.
    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        let pose_close = |a: &Pose6D, b: &Pose6D| a.as_array().iter().zip(b.as_array()).all(|(x, y)| (x - y).abs() <= tol);
        self.task_id == other.task_id
            && pose_close(&self.parking_location, &other.parking_location)
            && self.reference_cloud == other.reference_cloud
            && self.extrinsic_teach.max_abs_diff(&other.extrinsic_teach) <= tol
            && self.created_at == other.created_at
            && self.reference_path.sample_rate_hz == other.reference_path.sample_rate_hz
            && self.reference_path.samples.len() == other.reference_path.samples.len()
            && self
                .reference_path
                .samples
                .iter()
                .zip(&other.reference_path.samples)
                .all(|(a, b)| a.time == b.time && a.pose.max_abs_diff(&b.pose) <= tol)
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id != "."
        && id != ".."
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

/// Renders the reference cloud at `sampling_pose` (camera in base) and
/// bundles it with the taught path. Colors and coordinates are quantized
/// to the stored precision so that save/load is lossless.
pub fn teach(
    world: &WorldState,
    sampling_pose: &RigidTransform,
    path: ReferencePath,
    task_id: &str,
    workspace_radius: f64,
    seed: u64,
) -> Result<TaskRecord, TaskError> {
    if !valid_id(task_id) {
        return Err(TaskError::InvalidTaskId(task_id.to_string()));
    }
    if !check_reachable(sampling_pose, workspace_radius) {
        return Err(TaskError::Unreachable { distance: sampling_pose.translation.norm(), radius: workspace_radius });
    }
    path.validate()?;
    let cloud = world.render(sampling_pose, seed)?.quantized();
    if cloud.is_empty() {
        return Err(TaskError::EmptyCloud);
    }
    let now = Utc::now();
    // Stored with microsecond precision.
    let created_at = DateTime::from_timestamp_micros(now.timestamp_micros()).unwrap_or(now);
    Ok(TaskRecord {
        task_id: task_id.to_string(),
        parking_location: world.true_base_pose_world.to_pose6d(),
        reference_cloud: cloud,
        reference_path: path,
        extrinsic_teach: *sampling_pose,
        created_at,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    schema_version: u32,
    task_id: String,
    parking_location: Pose6D,
    extrinsic_teach: Pose6D,
    cloud: String,
    path: String,
    created_at: String,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TaskError + '_ {
    move |source| TaskError::Io { path: path.to_path_buf(), source }
}

/// Writes `root_dir/<task_id>/{task.json, cloud.ply, path.json}`.
pub fn save_task(record: &TaskRecord, root_dir: &Path) -> Result<PathBuf, TaskError> {
    if !valid_id(&record.task_id) {
        return Err(TaskError::InvalidTaskId(record.task_id.clone()));
    }
    let dir = root_dir.join(&record.task_id);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    save_ply(&record.reference_cloud, dir.join(CLOUD_FILE))?;
    record.reference_path.save(&dir.join(PATH_FILE))?;
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        task_id: record.task_id.clone(),
        parking_location: record.parking_location,
        extrinsic_teach: record.extrinsic_teach.to_pose6d(),
        cloud: CLOUD_FILE.into(),
        path: PATH_FILE.into(),
        created_at: record.created_at.to_rfc3339_opts(SecondsFormat::Micros, true),
    };
    let file = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest is serializable");
    fs::write(&file, json).map_err(io_err(&file))?;
    Ok(dir)
}

pub fn load_task(task_id: &str, root_dir: &Path) -> Result<TaskRecord, TaskError> {
    if !valid_id(task_id) {
        return Err(TaskError::InvalidTaskId(task_id.to_string()));
    }
    let dir = root_dir.join(task_id);
    let file = dir.join(MANIFEST_FILE);
    if !file.is_file() {
        return Err(TaskError::MissingManifest(file));
    }
    let text = fs::read_to_string(&file).map_err(io_err(&file))?;
    let schema = |reason: String| TaskError::Schema { path: file.clone(), reason };
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| schema(e.to_string()))?;
    let version = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| schema("missing integer `schema_version`".into()))?;
    if version != SCHEMA_VERSION as u64 {
        return Err(TaskError::VersionMismatch { found: version as u32, expected: SCHEMA_VERSION });
    }
    let manifest: Manifest = serde_json::from_value(value).map_err(|e| schema(e.to_string()))?;
    if manifest.task_id != task_id {
        return Err(schema(format!("task id `{}` does not match directory `{task_id}`", manifest.task_id)));
    }
    let created_at = DateTime::parse_from_rfc3339(&manifest.created_at)
        .map_err(|e| schema(format!("created_at: {e}")))?
        .with_timezone(&Utc);
    let cloud_file = dir.join(&manifest.cloud);
    if !cloud_file.is_file() {
        return Err(TaskError::DanglingCloud(cloud_file));
    }
    let path_file = dir.join(&manifest.path);
    if !path_file.is_file() {
        return Err(TaskError::DanglingPath(path_file));
    }
    let cloud = load_ply(&cloud_file)?.cloud;
    let reference_path = ReferencePath::load(&path_file)?;
    Ok(TaskRecord {
        task_id: manifest.task_id,
        parking_location: manifest.parking_location,
        reference_cloud: cloud,
        reference_path,
        extrinsic_teach: RigidTransform::from_pose6d(&manifest.extrinsic_teach),
        created_at,
    })
}
