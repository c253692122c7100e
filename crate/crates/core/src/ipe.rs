//! Iterative pose estimation: re-sample from the corrected camera pose,
//! register against the teaching cloud, and repeat until the camera is back
//! at its teaching-stage world pose (or the iteration budget runs out).

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{compose, relative_base_pose, transform_to_pose6d, Pose6D, RigidTransform};
use crate::pointcloud::ColoredPointCloud;
use crate::registration::{global_colored_registration, RegistrationParams, RegistrationResult};
use crate::seed::derive_seed_path;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IpeError {
    #[error("invalid IPE configuration: {0}")]
    InvalidConfig(String),
    #[error("world interface: {0}")]
    World(String),
}

/// The robot and sensor as seen by the estimator.
pub trait WorldInterface {
    /// Moves the camera to `camera_in_base` and captures a cloud in the
    /// camera frame. `seed` selects the sensor-noise stream.
    fn sample_cloud(&mut self, camera_in_base: &RigidTransform, seed: u64) -> Result<ColoredPointCloud, IpeError>;
}

/// Produces the transform taking the reference (teaching) cloud onto the
/// current one, i.e. the camera pose change.
pub trait PoseEstimator {
    fn estimate(
        &mut self,
        reference: &ColoredPointCloud,
        current: &ColoredPointCloud,
        camera_in_base: &RigidTransform,
        seed: u64,
    ) -> RegistrationResult;
}

/// The full registration pipeline; hard errors (e.g. an empty view) are
/// reported as unconverged results so that they count against the budget.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationEstimator {
    pub params: RegistrationParams,
}

impl PoseEstimator for RegistrationEstimator {
    fn estimate(
        &mut self,
        reference: &ColoredPointCloud,
        current: &ColoredPointCloud,
        _camera_in_base: &RigidTransform,
        seed: u64,
    ) -> RegistrationResult {
        let params = RegistrationParams { seed, ..self.params.clone() };
        global_colored_registration(reference, current, &params).unwrap_or_else(|_| RegistrationResult {
            transform: RigidTransform::identity(),
            fitness: 0.0,
            inlier_rmse: 0.0,
            converged: false,
            failure: None,
            objective_history: Vec::new(),
            correspondences: 0,
        })
    }
}

/// Returns the exact camera pose change implied by a known relative base
/// pose; stands in for registration when the ground truth is injected.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactEstimator {
    pub delta_base: RigidTransform,
    pub extrinsic_teach: RigidTransform,
}

impl PoseEstimator for ExactEstimator {
    fn estimate(&mut self, _: &ColoredPointCloud, _: &ColoredPointCloud, camera_in_base: &RigidTransform, _: u64) -> RegistrationResult {
        let transform = camera_in_base.inverse().compose(&self.delta_base).compose(&self.extrinsic_teach);
        RegistrationResult {
            transform,
            fitness: 1.0,
            inlier_rmse: 0.0,
            converged: true,
            failure: None,
            objective_history: Vec::new(),
            correspondences: 0,
        }
    }
}

/// Per-component threshold `(t: 0.001 m, r: 0.25 deg)` scaled by `1 + (i - 1) / 2`
/// for `i` in 1..=5.
pub fn alpha_preset(i: usize) -> Option<Pose6D> {
    if !(1..=5).contains(&i) {
        return None;
    }
    let f = 1.0 + (i as f64 - 1.0) * 0.5;
    let (t, r) = (0.001 * f, 0.25 * f);
    Some(Pose6D::new(t, t, t, r, r, r))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IpeConfig {
    /// Convergence thresholds (meters, degrees), all strictly positive.
    pub alpha: Pose6D,
    pub beta: usize,
    pub workspace_radius: f64,
    pub registration: RegistrationParams,
}

impl Default for IpeConfig {
    fn default() -> Self {
        Self {
            alpha: alpha_preset(3).expect("preset exists"),
            beta: 5,
            workspace_radius: 0.8,
            registration: RegistrationParams::default(),
        }
    }
}

impl IpeConfig {
    pub fn validate(&self) -> Result<(), IpeError> {
        if self.alpha.as_array().iter().any(|a| !(*a > 0.0)) {
            return Err(IpeError::InvalidConfig(format!("alpha components must be positive: {:?}", self.alpha)));
        }
        if self.beta < 1 {
            return Err(IpeError::InvalidConfig("beta must be at least 1".into()));
        }
        if !(self.workspace_radius > 0.0) {
            return Err(IpeError::InvalidConfig("workspace radius must be positive".into()));
        }
        self.registration.validate().map_err(|e| IpeError::InvalidConfig(e.to_string()))
    }
}

/// True iff every component of `delta_cam` (as `Pose6D`) is strictly below
/// the matching threshold in magnitude.
pub fn pose_difference_below(delta_cam: &RigidTransform, alpha: &Pose6D) -> bool {
    let d = transform_to_pose6d(delta_cam).pose.as_array();
    d.iter().zip(alpha.as_array()).all(|(v, a)| v.abs() < a)
}

/// Teaching camera pose expressed in the current base frame.
pub fn next_sampling_pose(delta_base: &RigidTransform, extrinsic_teach: &RigidTransform) -> RigidTransform {
    compose(delta_base, extrinsic_teach)
}

/// Spherical workspace, boundary included.
pub fn check_reachable(pose_in_base: &RigidTransform, workspace_radius: f64) -> bool {
    pose_in_base.translation.norm() <= workspace_radius
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpeIterationTrace {
    pub k: usize,
    pub commanded_camera_pose_in_base: RigidTransform,
    /// Number of points in the cloud sampled at this iteration.
    pub cloud_points: usize,
    pub delta_cam: RigidTransform,
    pub delta_base: RigidTransform,
    pub registration_converged: bool,
    pub registration_fitness: f64,
    pub registration_rmse: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    Unreachable,
    ExceededBeta,
    RegistrationFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpeResult {
    pub flag: bool,
    /// Latest estimate from a converged registration (identity if none).
    pub delta_base_final: RigidTransform,
    pub iterations: Vec<IpeIterationTrace>,
    pub failure_reason: Option<FailureReason>,
}

impl IpeResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace is serializable")
    }
}

/// Runs the loop with the default registration pipeline.
pub fn run_ipe(
    reference: &ColoredPointCloud,
    extrinsic_teach: &RigidTransform,
    world: &mut dyn WorldInterface,
    config: &IpeConfig,
    seed: u64,
) -> Result<IpeResult, IpeError> {
    let mut estimator = RegistrationEstimator { params: config.registration.clone() };
    run_ipe_with(reference, extrinsic_teach, world, config, seed, &mut estimator)
}

const SENSOR_STREAM: u64 = 1;
const REGISTRATION_STREAM: u64 = 2;

/// The loop with a caller-supplied estimator. Sensor and registration seeds
/// depend only on `(seed, k)`, so runs that differ only in `alpha` or
/// `beta` share identical prefixes.
///
/// A failed registration still consumes an iteration; the next attempt is
/// made from the same commanded pose with fresh seeds.
pub fn run_ipe_with(
    reference: &ColoredPointCloud,
    extrinsic_teach: &RigidTransform,
    world: &mut dyn WorldInterface,
    config: &IpeConfig,
    seed: u64,
    estimator: &mut dyn PoseEstimator,
) -> Result<IpeResult, IpeError> {
    config.validate()?;
    let mut commanded = *extrinsic_teach;
    let mut best = RigidTransform::identity();
    let mut iterations = Vec::new();
    let mut last_failed = false;
    for k in 1..=config.beta {
        if !check_reachable(&commanded, config.workspace_radius) {
            return Ok(IpeResult {
                flag: false,
                delta_base_final: best,
                iterations,
                failure_reason: Some(FailureReason::Unreachable),
            });
        }
        let cloud = world.sample_cloud(&commanded, derive_seed_path(seed, &[k as u64, SENSOR_STREAM]))?;
        let start = Instant::now();
        let reg = estimator.estimate(reference, &cloud, &commanded, derive_seed_path(seed, &[k as u64, REGISTRATION_STREAM]));
        let wall_time = start.elapsed().as_secs_f64();
        let delta_cam = reg.transform;
        let delta_base = relative_base_pose(&delta_cam, extrinsic_teach, &commanded);
        iterations.push(IpeIterationTrace {
            k,
            commanded_camera_pose_in_base: commanded,
            cloud_points: cloud.len(),
            delta_cam,
            delta_base,
            registration_converged: reg.converged,
            registration_fitness: reg.fitness,
            registration_rmse: reg.inlier_rmse,
            wall_time,
        });
        last_failed = !reg.converged;
        if last_failed {
            continue;
        }
        best = delta_base;
        if pose_difference_below(&delta_cam, &config.alpha) {
            return Ok(IpeResult { flag: true, delta_base_final: best, iterations, failure_reason: None });
        }
        commanded = next_sampling_pose(&delta_base, extrinsic_teach);
    }
    let reason = if last_failed { FailureReason::RegistrationFailed } else { FailureReason::ExceededBeta };
    Ok(IpeResult { flag: false, delta_base_final: best, iterations, failure_reason: Some(reason) })
}
