//! Synthetic world: scenes, a ray-cast depth camera, parking-error models
//! and the robot base whose true pose only the simulator knows.

pub mod camera;
pub mod scene;
pub mod texture;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use camera::{look_at, render_cloud, CameraModel};
pub use scene::{build_scene, Material, Primitive, SceneMesh, SceneSpec, SCENE_NAMES};
pub use texture::Texture;

use crate::geometry::{Pose6D, RigidTransform, RotationMatrix};
use crate::ipe::{IpeError, WorldInterface};
use crate::pointcloud::ColoredPointCloud;
use crate::seed::derive_seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("unknown scene `{0}`")]
    UnknownScene(String),
    #[error("unknown parking profile `{0}`")]
    UnknownProfile(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid camera model: {0}")]
    InvalidCamera(String),
    #[error("invalid parking profile: {0}")]
    InvalidProfile(String),
    #[error("texture {path}: {reason}")]
    Texture { path: String, reason: String },
    #[error("i/o: {0}")]
    Io(String),
}

/// Per-component Gaussian model of the base parking error at one site
/// (meters, degrees).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParkingNoiseProfile {
    pub name: String,
    pub mean: Pose6D,
    pub std: Pose6D,
}

pub const PROFILE_NAMES: [&str; 4] = ["site1", "site2", "site2_prime", "zero"];

impl ParkingNoiseProfile {
    pub fn site1() -> Self {
        Self {
            name: "site1".into(),
            mean: Pose6D::new(0.0011, -0.0995, -0.0012, 0.2151, -0.0036, 0.0023),
            std: Pose6D::new(0.0281, 0.0179, 0.0013, 0.1593, 0.1439, 2.9214),
        }
    }

    pub fn site2() -> Self {
        Self {
            name: "site2".into(),
            mean: Pose6D::new(0.0505, 0.0539, -0.0011, 0.1155, -0.1733, 1.6706),
            std: Pose6D::new(0.0287, 0.0287, 0.0014, 0.0784, 0.1295, 2.7079),
        }
    }

    /// Site 2 with a speed bump under the parking spot.
    pub fn site2_prime() -> Self {
        Self {
            name: "site2_prime".into(),
            mean: Pose6D::new(0.0779, 0.0261, -0.0042, 0.0079, 0.7932, -1.9701),
            std: Pose6D::new(0.0569, 0.1060, 0.0054, 1.2595, 2.6967, 14.7211),
        }
    }

    pub fn zero() -> Self {
        Self { name: "zero".into(), mean: Pose6D::default(), std: Pose6D::default() }
    }

    pub fn by_name(name: &str) -> Result<Self, SimError> {
        match name {
            "site1" => Ok(Self::site1()),
            "site2" => Ok(Self::site2()),
            "site2_prime" => Ok(Self::site2_prime()),
            "zero" => Ok(Self::zero()),
            other => Err(SimError::UnknownProfile(other.to_string())),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let s = self.std.as_array();
        let m = self.mean.as_array();
        if s.iter().any(|v| !(*v >= 0.0 && v.is_finite())) || m.iter().any(|v| !v.is_finite()) {
            return Err(SimError::InvalidProfile(format!("{}: stds must be finite and non-negative", self.name)));
        }
        Ok(())
    }
}

/// Independent Gaussian draw per component, in `tx, ty, tz, roll, pitch,
/// yaw` order.
pub fn sample_parking_error(profile: &ParkingNoiseProfile, seed: u64) -> Pose6D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = profile.mean.as_array();
    let s = profile.std.as_array();
    let mut out = [0.0; 6];
    for i in 0..6 {
        let n: f64 = StandardNormal.sample(&mut rng);
        out[i] = m[i] + s[i] * n;
    }
    Pose6D::from_array(out)
}

/// Map pose of the teaching-stage base at a named site.
pub fn site_pose_world(profile_name: &str) -> Result<RigidTransform, SimError> {
    let (t, q) = match profile_name {
        "site1" => ([2.0415, -1.375, 0.0], [0.0, 0.0, -0.2970, 0.9548]),
        "site2" | "site2_prime" => ([0.1251, -0.7638, 0.0], [0.0, 0.0, -0.8785, 0.4776]),
        "zero" => ([0.0; 3], [0.0, 0.0, 0.0, 1.0]),
        other => return Err(SimError::UnknownProfile(other.to_string())),
    };
    let r = RotationMatrix::from_quaternion(q[0], q[1], q[2], q[3]).map_err(|e| SimError::InvalidProfile(e.to_string()))?;
    Ok(RigidTransform::new(r, Vector3::from(t)))
}

/// Camera pose in the base frame at the teaching arm configuration: above
/// the table edge, looking down at the workspace.
pub fn default_teach_extrinsic() -> RigidTransform {
    look_at(&Vector3::new(0.25, 0.0, 0.45), &Vector3::new(0.6, 0.0, 0.0), &Vector3::z())
}

/// Camera mounted 0.1 m along the end-effector z axis.
pub fn default_hand_eye() -> RigidTransform {
    RigidTransform::from_translation(0.0, 0.0, 0.1)
}

/// Ground-truth state of the simulated robot. Scenes are modeled in the
/// teaching-stage base frame, placed in the world at `site_pose_world`.
#[derive(Debug, Clone)]
pub struct WorldState {
    pub scene: SceneSpec,
    mesh: SceneMesh,
    /// Teaching-stage base pose in the world.
    pub site_pose_world: RigidTransform,
    pub true_base_pose_world: RigidTransform,
    pub camera: CameraModel,
    /// Camera pose in the end-effector frame.
    pub hand_eye: RigidTransform,
    pub rng_seed: u64,
}

impl WorldState {
    pub fn new(scene: SceneSpec, site_pose_world: RigidTransform, camera: CameraModel, rng_seed: u64) -> Result<Self, SimError> {
        scene.validate()?;
        camera.validate()?;
        let mesh = scene.compile();
        Ok(Self {
            scene,
            mesh,
            site_pose_world,
            true_base_pose_world: site_pose_world,
            camera,
            hand_eye: default_hand_eye(),
            rng_seed,
        })
    }

    /// Parks the base with relative error `error`, defined so that the
    /// ground-truth relative base pose afterwards is exactly
    /// `pose6d_to_transform(error)` composed onto any earlier error.
    pub fn apply_parking(mut self, error: &Pose6D) -> Self {
        let e = RigidTransform::from_pose6d(error);
        self.true_base_pose_world = self.true_base_pose_world.compose(&e.inverse());
        self
    }

    /// Teaching-stage base pose expressed in the current base frame.
    pub fn ground_truth_delta_base(&self) -> RigidTransform {
        self.true_base_pose_world.inverse().compose(&self.site_pose_world)
    }

    pub fn camera_pose_world(&self, camera_in_base: &RigidTransform) -> RigidTransform {
        self.true_base_pose_world.compose(camera_in_base)
    }

    /// End-effector pose (base frame) that places the camera at `camera_in_base`.
    pub fn end_effector_for_camera(&self, camera_in_base: &RigidTransform) -> RigidTransform {
        camera_in_base.compose(&self.hand_eye.inverse())
    }

    /// Sensor output at `camera_in_base`: 8-bit color and single-precision
    /// coordinates, as stored in PLY files.
    pub fn render(&self, camera_in_base: &RigidTransform, seed: u64) -> Result<ColoredPointCloud, SimError> {
        let in_scene = self.site_pose_world.inverse().compose(&self.camera_pose_world(camera_in_base));
        Ok(render_cloud(&self.mesh, &in_scene, &self.camera, derive_seed(self.rng_seed, seed))?.quantized())
    }
}

impl WorldInterface for WorldState {
    fn sample_cloud(&mut self, camera_in_base: &RigidTransform, seed: u64) -> Result<ColoredPointCloud, IpeError> {
        self.render(camera_in_base, seed).map_err(|e| IpeError::World(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::transform_to_pose6d;

    fn world() -> WorldState {
        WorldState::new(build_scene("B3").unwrap(), site_pose_world("site1").unwrap(), CameraModel::default(), 1).unwrap()
    }

    #[test]
    fn zero_std_profile_returns_mean() {
        let p = ParkingNoiseProfile { std: Pose6D::default(), ..ParkingNoiseProfile::site1() };
        assert_eq!(sample_parking_error(&p, 99), ParkingNoiseProfile::site1().mean);
    }

    #[test]
    fn sample_means_converge() {
        let p = ParkingNoiseProfile::site2_prime();
        let n = 10_000;
        let mut sum = [0.0; 6];
        for i in 0..n {
            let s = sample_parking_error(&p, derive_seed(5, i)).as_array();
            for k in 0..6 {
                sum[k] += s[k];
            }
        }
        for k in 0..6 {
            let mean = sum[k] / n as f64;
            let bound = 4.0 * p.std.as_array()[k] / (n as f64).sqrt();
            assert!((mean - p.mean.as_array()[k]).abs() <= bound, "component {k}: {mean}");
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = ParkingNoiseProfile::site1();
        assert_eq!(sample_parking_error(&p, 3), sample_parking_error(&p, 3));
        assert_ne!(sample_parking_error(&p, 3), sample_parking_error(&p, 4));
    }

    #[test]
    fn bump_profile_spreads_out_of_plane() {
        let bump = ParkingNoiseProfile::site2_prime().std;
        for flat in [ParkingNoiseProfile::site1().std, ParkingNoiseProfile::site2().std] {
            assert!(bump.tz > flat.tz && bump.roll > flat.roll && bump.pitch > flat.pitch);
        }
        let e = sample_parking_error(&ParkingNoiseProfile::site2_prime(), 1);
        let gt = world().apply_parking(&e).ground_truth_delta_base();
        let d = transform_to_pose6d(&gt).pose;
        assert!(d.tz != 0.0 && d.roll != 0.0 && d.pitch != 0.0);
    }

    #[test]
    fn profiles_by_name() {
        for n in PROFILE_NAMES {
            assert_eq!(ParkingNoiseProfile::by_name(n).unwrap().name, n);
            assert!(site_pose_world(n).is_ok());
        }
        assert!(ParkingNoiseProfile::by_name("site9").is_err());
        let bad = ParkingNoiseProfile { std: Pose6D::new(-1.0, 0.0, 0.0, 0.0, 0.0, 0.0), ..ParkingNoiseProfile::zero() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn parking_ground_truth() {
        let w = world();
        assert!(w.ground_truth_delta_base().max_abs_diff(&RigidTransform::identity()) < 1e-15);
        let w = w.apply_parking(&Pose6D::new(0.0, 0.0, 0.0, 0.0, 0.0, 5.0));
        let gt = w.ground_truth_delta_base();
        assert!((gt.rotation.matrix() - RotationMatrix::rot_z(5.0).matrix()).amax() < 1e-12);
        assert!(gt.translation.norm() < 1e-12);
    }

    #[test]
    fn corrective_motion_reproduces_teaching_view() {
        let teach = default_teach_extrinsic();
        let w = world().camera.clone();
        let noiseless = WorldState::new(build_scene("B3").unwrap(), site_pose_world("site1").unwrap(), w.noiseless(), 1).unwrap();
        let reference = noiseless.render(&teach, 0).unwrap();
        let parked = noiseless.apply_parking(&Pose6D::new(0.03, -0.08, 0.0, 0.2, -0.1, 4.0));
        let corrected = parked.ground_truth_delta_base().compose(&teach);
        let world_pose = parked.camera_pose_world(&corrected);
        let taught_world = parked.site_pose_world.compose(&teach);
        assert!(world_pose.max_abs_diff(&taught_world) < 1e-9);
        let again = parked.render(&corrected, 0).unwrap();
        assert_eq!(again.len(), reference.len());
        let worst = again.points().iter().zip(reference.points()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn teaching_view_sees_the_scene() {
        let w = world();
        let cloud = w.render(&default_teach_extrinsic(), 0).unwrap();
        assert!(cloud.len() > 80_000);
        assert!(default_teach_extrinsic().translation.norm() < 0.8);
    }
}
