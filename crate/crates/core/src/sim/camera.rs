//! Pinhole depth camera (OpenCV axes: x right, y down, z forward) rendered
//! by ray casting against a [`SceneMesh`].

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::scene::SceneMesh;
use super::SimError;
use crate::geometry::{RigidTransform, RotationMatrix};
use crate::pointcloud::ColoredPointCloud;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Depth noise standard deviation is `a + b z^2`.
    pub depth_noise_a: f64,
    pub depth_noise_b: f64,
    pub min_depth: f64,
    pub max_depth: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            fx: 215.0,
            fy: 215.0,
            cx: 211.5,
            cy: 119.5,
            width: 424,
            height: 240,
            depth_noise_a: 0.0005,
            depth_noise_b: 0.002,
            min_depth: 0.1,
            max_depth: 3.0,
        }
    }
}

impl CameraModel {
    pub fn noiseless(mut self) -> Self {
        self.depth_noise_a = 0.0;
        self.depth_noise_b = 0.0;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.width > 0
            && self.height > 0
            && self.depth_noise_a >= 0.0
            && self.depth_noise_b >= 0.0
            && self.min_depth >= 0.0
            && self.min_depth < self.max_depth
            && [self.cx, self.cy].iter().all(|c| c.is_finite());
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidCamera(format!("{self:?}")))
        }
    }

    pub fn depth_sigma(&self, z: f64) -> f64 {
        self.depth_noise_a + self.depth_noise_b * z * z
    }

    /// Ray direction of pixel `(u, v)` in the camera frame, scaled to unit depth.
    pub fn pixel_ray(&self, u: usize, v: usize) -> Vector3<f64> {
        Vector3::new((u as f64 - self.cx) / self.fx, (v as f64 - self.cy) / self.fy, 1.0)
    }
}

/// Camera pose (camera to scene) at `eye` looking at `target`, with image
/// "up" as close to `up` as possible.
pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>, up: &Vector3<f64>) -> RigidTransform {
    let z = (target - eye).normalize();
    let y = (z * up.dot(&z) - up).normalize();
    let x = y.cross(&z);
    let r = Matrix3::from_columns(&[x, y, z]);
    RigidTransform::new(RotationMatrix::from_matrix_unchecked(r), *eye)
}

/// Renders one point per pixel whose ray hits the scene within the depth
/// range, expressed in the camera frame. Depth noise is applied along the
/// pixel ray; the same seed reproduces the same cloud.
pub fn render_cloud(
    scene: &SceneMesh,
    camera_pose: &RigidTransform,
    model: &CameraModel,
    seed: u64,
) -> Result<ColoredPointCloud, SimError> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noisy = model.depth_noise_a > 0.0 || model.depth_noise_b > 0.0;
    let mut points = Vec::new();
    let mut colors = Vec::new();
    let origin = camera_pose.translation;
    for v in 0..model.height {
        for u in 0..model.width {
            let ray = model.pixel_ray(u, v);
            let dir = camera_pose.apply_vector(&ray);
            // With a unit-depth ray the hit parameter is the depth itself.
            let Some(hit) = scene.intersect(&origin, &dir, model.min_depth, model.max_depth) else { continue };
            let mut depth = hit.t;
            if noisy {
                let n: f64 = StandardNormal.sample(&mut rng);
                depth += model.depth_sigma(depth) * n;
                if depth <= 0.0 {
                    continue;
                }
            }
            points.push(ray * depth);
            colors.push(hit.color);
        }
    }
    Ok(ColoredPointCloud::from_parts_unchecked(points, colors, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scene::{build_scene, Material, Primitive, SceneSpec};
    use crate::sim::texture::Texture;
    use std::collections::BTreeMap;
    use std::sync::Arc;

    fn big_plane(material: Material, textures: BTreeMap<String, Arc<Texture>>) -> SceneSpec {
        let h = 1.0;
        let c = [[-h, -h, 0.0], [h, -h, 0.0], [h, h, 0.0], [-h, h, 0.0]];
        let uv = |p: [f64; 3]| [(p[0] + h) / (2.0 * h), (p[1] + h) / (2.0 * h)];
        SceneSpec {
            name: "plane".into(),
            primitives: vec![
                Primitive::Triangle { vertices: [c[0], c[1], c[2]], uv: [uv(c[0]), uv(c[1]), uv(c[2])], material: material.clone() },
                Primitive::Triangle { vertices: [c[0], c[2], c[3]], uv: [uv(c[0]), uv(c[2]), uv(c[3])], material },
            ],
            textures,
        }
    }

    fn down_camera(height: f64) -> RigidTransform {
        look_at(&Vector3::new(0.0, 0.0, height), &Vector3::zeros(), &Vector3::y())
    }

    #[test]
    fn look_at_builds_proper_rotation() {
        let t = look_at(&Vector3::new(0.3, 0.0, 0.4), &Vector3::new(0.6, 0.0, 0.0), &Vector3::z());
        assert!(RotationMatrix::new(*t.rotation.matrix()).is_ok());
        let forward = t.apply_vector(&Vector3::z());
        assert!((forward - Vector3::new(0.3, 0.0, -0.4) / 0.5).norm() < 1e-12);
        // Image down points away from world up.
        assert!(t.apply_vector(&Vector3::y()).z < 0.0);
    }

    #[test]
    fn noiseless_plane_depths_are_exact() {
        let mesh = big_plane(Material::Solid { color: [0.3, 0.4, 0.5] }, BTreeMap::new()).compile();
        let model = CameraModel::default().noiseless();
        let cloud = render_cloud(&mesh, &down_camera(0.5), &model, 0).unwrap();
        assert_eq!(cloud.len(), model.width * model.height);
        assert!(cloud.points().iter().all(|p| (p.z - 0.5).abs() < 1e-9));
        assert!(cloud.colors().iter().all(|c| (c - Vector3::new(0.3, 0.4, 0.5)).norm() < 1e-12));
    }

    #[test]
    fn colors_follow_texture_lookup() {
        let tex = Arc::new(Texture::checkerboard(200, 20, Vector3::repeat(0.1), Vector3::repeat(0.9)));
        let mut textures = BTreeMap::new();
        textures.insert("cb".to_string(), tex.clone());
        let material = Material::Texture { texture: "cb".into(), scale_m: 1.0, uv_offset: [0.0, 0.0] };
        let mesh = big_plane(material, textures).compile();
        let pose = down_camera(0.8);
        let cloud = render_cloud(&mesh, &pose, &CameraModel::default().noiseless(), 0).unwrap();
        for (p, c) in cloud.points().iter().zip(cloud.colors()).step_by(97) {
            let w = pose.apply(p);
            let expected = tex.sample((w.x + 1.0) / 2.0, (w.y + 1.0) / 2.0);
            assert!((c - expected).norm() < 1e-6);
        }
    }

    #[test]
    fn deterministic_noise_and_count_bound() {
        let mesh = build_scene("B3").unwrap().compile();
        let pose = look_at(&Vector3::new(0.3, 0.0, 0.45), &Vector3::new(0.6, 0.0, 0.0), &Vector3::z());
        let model = CameraModel::default();
        let a = render_cloud(&mesh, &pose, &model, 7).unwrap();
        let b = render_cloud(&mesh, &pose, &model, 7).unwrap();
        let c = render_cloud(&mesh, &pose, &model, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.len() <= model.width * model.height);
        assert!(a.len() > model.width * model.height / 2);
    }

    #[test]
    fn empty_view_is_empty_cloud() {
        let mesh = build_scene("A1").unwrap().compile();
        let up = look_at(&Vector3::new(0.0, 0.0, 1.0), &Vector3::new(0.0, 0.0, 2.0), &Vector3::x());
        assert!(render_cloud(&mesh, &up, &CameraModel::default(), 0).unwrap().is_empty());
    }

    #[test]
    fn invalid_model_rejected() {
        let mesh = build_scene("A1").unwrap().compile();
        let model = CameraModel { min_depth: 2.0, max_depth: 1.0, ..Default::default() };
        assert!(render_cloud(&mesh, &down_camera(1.0), &model, 0).is_err());
    }
}
