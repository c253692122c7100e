//! Pose estimation between two colored clouds of the same scene: FPFH
//! features and a robust global alignment for the coarse estimate, then
//! multi-scale colored ICP.

pub mod fgr;
pub mod fpfh;
pub mod icp;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fgr::fast_global_registration;
pub use fpfh::{compute_fpfh, compute_fpfh_capped, FpfhFeature};
pub use icp::{colored_icp, icp_point_to_point, LevelOptions};

use crate::geometry::RigidTransform;
use crate::pointcloud::{estimate_normals_capped, voxel_downsample, CloudError, ColoredPointCloud, SpatialIndex};
use icp::PreparedTarget;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistrationError {
    #[error("invalid registration parameters: {0}")]
    InvalidParams(String),
    #[error("{0} requires normals")]
    MissingNormals(&'static str),
    #[error("{stage}: too few points ({got})")]
    TooFewPoints { stage: &'static str, got: usize },
    #[error("{stage}: {source}")]
    Cloud {
        stage: &'static str,
        #[source]
        source: CloudError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Global,
    Local,
}

/// Soft failures: the estimate exists but must not be trusted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegistrationFailure {
    TooFewCorrespondences { stage: Stage, found: usize, required: usize },
    NoCorrespondences { stage: Stage },
    LowFitness { stage: Stage, fitness: f64, threshold: f64 },
    Degenerate { stage: Stage, min_eigenvalue: f64, threshold: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    /// Maps source coordinates into the target frame.
    pub transform: RigidTransform,
    /// Fraction of source points with a target neighbor within the
    /// correspondence distance.
    pub fitness: f64,
    /// RMS distance over those correspondences.
    pub inlier_rmse: f64,
    pub converged: bool,
    pub failure: Option<RegistrationFailure>,
    /// Objective after each accepted iteration of the final refinement.
    pub objective_history: Vec<f64>,
    pub correspondences: usize,
}

impl RegistrationResult {
    pub(crate) fn failed(failure: RegistrationFailure) -> Self {
        Self {
            transform: RigidTransform::identity(),
            fitness: 0.0,
            inlier_rmse: 0.0,
            converged: false,
            failure: Some(failure),
            objective_history: Vec::new(),
            correspondences: 0,
        }
    }
}

fn default_pyramid() -> Vec<f64> {
    vec![0.04, 0.02, 0.01]
}

/// Configuration for the full pipeline. Distances derived from the voxel
/// size of each pyramid level use the `*_factor` fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationParams {
    /// Voxel sizes, coarse to fine, strictly decreasing (meters).
    pub voxel_pyramid: Vec<f64>,
    pub max_iterations_per_level: usize,
    /// Weight of the geometric term in colored ICP; the photometric term
    /// gets `1 - color_weight`.
    pub color_weight: f64,
    pub correspondence_distance_factor: f64,
    pub normal_radius_factor: f64,
    pub feature_radius_factor: f64,
    /// Neighbor cap for normals and intensity gradients.
    pub max_nn: usize,
    /// Neighbor cap for features.
    pub feature_max_nn: usize,
    /// Robust-kernel widths (squared meters) for the global stage; empty
    /// selects a schedule derived from the data extent and coarse voxel.
    pub gnc_mu_schedule: Vec<f64>,
    pub tuple_scale: f64,
    pub max_tuples: usize,
    pub min_correspondences: usize,
    pub fitness_threshold: f64,
    pub degeneracy_threshold: f64,
    pub relative_tolerance: f64,
    /// When false, colors are ignored and the local stage is point-to-point ICP.
    pub use_color: bool,
    pub seed: u64,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        Self {
            voxel_pyramid: default_pyramid(),
            max_iterations_per_level: 30,
            color_weight: 0.968,
            correspondence_distance_factor: 1.5,
            normal_radius_factor: 2.0,
            feature_radius_factor: 5.0,
            max_nn: 30,
            feature_max_nn: 100,
            gnc_mu_schedule: Vec::new(),
            tuple_scale: 0.95,
            max_tuples: 1000,
            min_correspondences: 10,
            fitness_threshold: 0.3,
            degeneracy_threshold: 0.01,
            relative_tolerance: 1e-6,
            use_color: true,
            seed: 0,
        }
    }
}

impl RegistrationParams {
    pub fn validate(&self) -> Result<(), RegistrationError> {
        let bad = |m: String| Err(RegistrationError::InvalidParams(m));
        if self.voxel_pyramid.is_empty() {
            return bad("voxel pyramid is empty".into());
        }
        if self.voxel_pyramid.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return bad(format!("voxel sizes must be positive: {:?}", self.voxel_pyramid));
        }
        if self.voxel_pyramid.windows(2).any(|w| w[1] >= w[0]) {
            return bad(format!("voxel pyramid must be strictly decreasing: {:?}", self.voxel_pyramid));
        }
        if !(0.0..=1.0).contains(&self.color_weight) {
            return bad(format!("color_weight must lie in [0, 1], got {}", self.color_weight));
        }
        for (name, v) in [
            ("correspondence_distance_factor", self.correspondence_distance_factor),
            ("normal_radius_factor", self.normal_radius_factor),
            ("feature_radius_factor", self.feature_radius_factor),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.tuple_scale > 0.0 && self.tuple_scale < 1.0) {
            return bad(format!("tuple_scale must lie in (0, 1), got {}", self.tuple_scale));
        }
        if self.gnc_mu_schedule.iter().any(|m| !(*m > 0.0)) {
            return bad("robust kernel widths must be positive".into());
        }
        if self.max_nn < 3 || self.feature_max_nn < 2 {
            return bad("neighbor caps are too small".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentEval {
    pub fitness: f64,
    pub inlier_rmse: f64,
    pub correspondences: usize,
}

/// Fitness and inlier RMSE of `source` moved by `t` against an indexed target.
pub fn evaluate_alignment(
    source: &ColoredPointCloud,
    target_index: &SpatialIndex,
    t: &RigidTransform,
    max_distance: f64,
) -> AlignmentEval {
    let dmax2 = max_distance * max_distance;
    let mut n = 0;
    let mut sum = 0.0;
    for p in source.points() {
        if let Some((_, d2)) = target_index.nearest(&t.apply(p)) {
            if d2 <= dmax2 {
                n += 1;
                sum += d2;
            }
        }
    }
    AlignmentEval {
        fitness: if source.is_empty() { 0.0 } else { n as f64 / source.len() as f64 },
        inlier_rmse: if n == 0 { 0.0 } else { (sum / n as f64).sqrt() },
        correspondences: n,
    }
}

/// One pyramid level of a cloud: downsampled with normals oriented toward
/// the sensor origin.
pub fn preprocess(cloud: &ColoredPointCloud, voxel: f64, params: &RegistrationParams) -> Result<ColoredPointCloud, RegistrationError> {
    let stage = "preprocess";
    let down = voxel_downsample(cloud, voxel).map_err(|source| RegistrationError::Cloud { stage, source })?;
    if down.len() < 3 {
        return Err(RegistrationError::TooFewPoints { stage, got: down.len() });
    }
    estimate_normals_capped(&down, params.normal_radius_factor * voxel, params.max_nn, &Vector3::zeros())
        .map_err(|source| RegistrationError::Cloud { stage, source })
}

fn refine(
    src: &ColoredPointCloud,
    tgt: &PreparedTarget,
    init: &RigidTransform,
    opts: &LevelOptions,
    use_color: bool,
) -> RegistrationResult {
    if use_color {
        icp::colored_icp_prepared(src, tgt, init, opts)
    } else {
        icp::point_to_point_prepared(src, tgt, init, opts)
    }
}

/// Transform taking `source` (camera-frame cloud) onto `target`.
///
/// The coarse level is refined from the feature-based global estimate, or
/// from the identity when feature matching fails; finer levels continue
/// from there. The result reports the finest level.
pub fn global_colored_registration(
    source: &ColoredPointCloud,
    target: &ColoredPointCloud,
    params: &RegistrationParams,
) -> Result<RegistrationResult, RegistrationError> {
    params.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(RegistrationError::TooFewPoints { stage: "input", got: source.len().min(target.len()) });
    }
    let (source, target) = if params.use_color {
        (source.clone(), target.clone())
    } else {
        (source.clone().without_color(), target.clone().without_color())
    };
    let mut levels = Vec::with_capacity(params.voxel_pyramid.len());
    for &voxel in &params.voxel_pyramid {
        levels.push((voxel, preprocess(&source, voxel, params)?, preprocess(&target, voxel, params)?));
    }

    let (v0, src0, tgt0) = &levels[0];
    let radius = params.feature_radius_factor * v0;
    let fs = compute_fpfh_capped(src0, radius, params.feature_max_nn)?;
    let ft = compute_fpfh_capped(tgt0, radius, params.feature_max_nn)?;
    let coarse = fast_global_registration(src0, tgt0, &fs, &ft, params)?;

    let opts0 = LevelOptions::for_voxel(params, *v0);
    let prepared0 = PreparedTarget::new(tgt0, params.use_color, &opts0)?;
    let init = if coarse.converged { coarse.transform } else { RigidTransform::identity() };
    let mut result = refine(src0, &prepared0, &init, &opts0, params.use_color);
    for (voxel, src, tgt) in &levels[1..] {
        let opts = LevelOptions::for_voxel(params, *voxel);
        let prepared = PreparedTarget::new(tgt, params.use_color, &opts)?;
        result = refine(src, &prepared, &result.transform, &opts, params.use_color);
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_validation() {
        assert!(RegistrationParams::default().validate().is_ok());
        let mut p = RegistrationParams::default();
        p.voxel_pyramid = vec![0.01, 0.02];
        assert!(p.validate().is_err());
        p = RegistrationParams::default();
        p.color_weight = 1.5;
        assert!(p.validate().is_err());
        p = RegistrationParams::default();
        p.voxel_pyramid.clear();
        assert!(p.validate().is_err());
    }

    #[test]
    fn params_json_round_trip_and_defaults() {
        let p = RegistrationParams { seed: 42, ..Default::default() };
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<RegistrationParams>(&s).unwrap(), p);
        let partial: RegistrationParams = serde_json::from_str(r#"{"color_weight": 0.5}"#).unwrap();
        assert_eq!(partial.voxel_pyramid, vec![0.04, 0.02, 0.01]);
        assert!(serde_json::from_str::<RegistrationParams>(r#"{"colour": 1}"#).is_err());
    }

    #[test]
    fn empty_inputs_are_errors() {
        let c = ColoredPointCloud::default();
        assert!(global_colored_registration(&c, &c, &RegistrationParams::default()).is_err());
    }
}
