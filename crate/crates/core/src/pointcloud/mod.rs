//! Colored point clouds and the preprocessing used by registration.

mod kdtree;
pub mod ply;

use std::collections::HashMap;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use thiserror::Error;

use crate::geometry::RigidTransform;

pub use kdtree::SpatialIndex;
pub use ply::{load_ply, save_ply, PlyCloud, PlyError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CloudError {
    #[error("length mismatch: {points} points, {other} {what}")]
    LengthMismatch { points: usize, other: usize, what: &'static str },
    #[error("color component {0} outside [0, 1]")]
    ColorOutOfRange(f64),
    #[error("normal {index} is neither unit length nor the zero flag (norm {norm})")]
    BadNormal { index: usize, norm: f64 },
    #[error("voxel size must be positive, got {0}")]
    NonPositiveVoxel(f64),
    #[error("neighborhood radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("normal estimation needs at least 3 points, got {0}")]
    TooFewPoints(usize),
}

/// Points (meters) with RGB colors in [0, 1] and optional normals.
///
/// A normal equal to the zero vector marks a point whose neighborhood was
/// too small to estimate one (zero confidence).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ColoredPointCloud {
    points: Vec<Vector3<f64>>,
    colors: Vec<Vector3<f64>>,
    normals: Option<Vec<Vector3<f64>>>,
}

impl ColoredPointCloud {
    pub fn new(
        points: Vec<Vector3<f64>>,
        colors: Vec<Vector3<f64>>,
        normals: Option<Vec<Vector3<f64>>>,
    ) -> Result<Self, CloudError> {
        if colors.len() != points.len() {
            return Err(CloudError::LengthMismatch { points: points.len(), other: colors.len(), what: "colors" });
        }
        if let Some(c) = colors.iter().flat_map(|c| c.iter()).find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(CloudError::ColorOutOfRange(*c));
        }
        if let Some(n) = &normals {
            if n.len() != points.len() {
                return Err(CloudError::LengthMismatch { points: points.len(), other: n.len(), what: "normals" });
            }
            for (index, v) in n.iter().enumerate() {
                let norm = v.norm();
                if norm != 0.0 && (norm - 1.0).abs() > 1e-6 {
                    return Err(CloudError::BadNormal { index, norm });
                }
            }
        }
        Ok(Self { points, colors, normals })
    }

    /// Geometry only; every point gets the same color.
    pub fn from_points(points: Vec<Vector3<f64>>, color: Vector3<f64>) -> Self {
        let colors = vec![color; points.len()];
        Self { points, colors, normals: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn colors(&self) -> &[Vector3<f64>] {
        &self.colors
    }

    pub fn normals(&self) -> Option<&[Vector3<f64>]> {
        self.normals.as_deref()
    }

    pub fn has_normals(&self) -> bool {
        self.normals.is_some()
    }

    pub fn with_normals(mut self, normals: Vec<Vector3<f64>>) -> Result<Self, CloudError> {
        if normals.len() != self.points.len() {
            return Err(CloudError::LengthMismatch { points: self.points.len(), other: normals.len(), what: "normals" });
        }
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn without_normals(mut self) -> Self {
        self.normals = None;
        self
    }

    /// Replaces every color with mid-gray, leaving geometry untouched.
    pub fn without_color(mut self) -> Self {
        self.colors.iter_mut().for_each(|c| *c = Vector3::repeat(0.5));
        self
    }

    /// Grayscale intensity: mean of the RGB channels.
    pub fn intensity(&self, i: usize) -> f64 {
        let c = &self.colors[i];
        (c.x + c.y + c.z) / 3.0
    }

    pub fn index(&self) -> SpatialIndex {
        SpatialIndex::new(&self.points)
    }

    /// Subset by index, preserving order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            colors: indices.iter().map(|&i| self.colors[i]).collect(),
            normals: self.normals.as_ref().map(|n| indices.iter().map(|&i| n[i]).collect()),
        }
    }

    /// Rounds points and normals to f32 and colors to 8 bits, the precision
    /// kept on disk.
    pub fn quantized(&self) -> Self {
        let q = |v: &Vector3<f64>| v.map(|x| x as f32 as f64);
        Self {
            points: self.points.iter().map(q).collect(),
            colors: self.colors.iter().map(|c| c.map(|x| (x * 255.0).round() / 255.0)).collect(),
            normals: self.normals.as_ref().map(|n| n.iter().map(q).collect()),
        }
    }

    pub fn centroid(&self) -> Option<Vector3<f64>> {
        if self.points.is_empty() {
            return None;
        }
        Some(self.points.iter().sum::<Vector3<f64>>() / self.points.len() as f64)
    }

    pub(crate) fn from_parts_unchecked(
        points: Vec<Vector3<f64>>,
        colors: Vec<Vector3<f64>>,
        normals: Option<Vec<Vector3<f64>>>,
    ) -> Self {
        Self { points, colors, normals }
    }
}

fn voxel_key(p: &Vector3<f64>, voxel: f64) -> (i64, i64, i64) {
    (
        (p.x / voxel).floor() as i64,
        (p.y / voxel).floor() as i64,
        (p.z / voxel).floor() as i64,
    )
}

/// One point per occupied voxel at the centroid of its members; colors and
/// normals are averaged (normals renormalized). Output order follows the
/// first appearance of each voxel in the input.
pub fn voxel_downsample(cloud: &ColoredPointCloud, voxel: f64) -> Result<ColoredPointCloud, CloudError> {
    if !(voxel > 0.0) {
        return Err(CloudError::NonPositiveVoxel(voxel));
    }
    let mut slots: HashMap<(i64, i64, i64), usize> = HashMap::with_capacity(cloud.len() / 4 + 1);
    let mut sum_p: Vec<Vector3<f64>> = Vec::new();
    let mut sum_c: Vec<Vector3<f64>> = Vec::new();
    let mut sum_n: Vec<Vector3<f64>> = Vec::new();
    let mut count: Vec<usize> = Vec::new();
    let normals = cloud.normals();
    for (i, p) in cloud.points.iter().enumerate() {
        let slot = *slots.entry(voxel_key(p, voxel)).or_insert_with(|| {
            sum_p.push(Vector3::zeros());
            sum_c.push(Vector3::zeros());
            sum_n.push(Vector3::zeros());
            count.push(0);
            count.len() - 1
        });
        sum_p[slot] += p;
        sum_c[slot] += cloud.colors[i];
        if let Some(n) = normals {
            sum_n[slot] += n[i];
        }
        count[slot] += 1;
    }
    let points: Vec<Vector3<f64>> = sum_p.iter().zip(&count).map(|(s, &n)| s / n as f64).collect();
    let colors = sum_c
        .iter()
        .zip(&count)
        .map(|(s, &n)| (s / n as f64).map(|x| x.clamp(0.0, 1.0)))
        .collect();
    let normals = normals.map(|_| {
        sum_n
            .iter()
            .map(|s| {
                let norm = s.norm();
                if norm > 1e-12 { s / norm } else { Vector3::zeros() }
            })
            .collect()
    });
    Ok(ColoredPointCloud { points, colors, normals })
}

/// Normal of each point from the smallest-eigenvalue eigenvector of its
/// radius-neighborhood covariance, oriented toward `viewpoint`. Points with
/// fewer than 3 neighbors (self included) get the zero flag.
pub fn estimate_normals(
    cloud: &ColoredPointCloud,
    neighborhood_radius: f64,
    viewpoint: &Vector3<f64>,
) -> Result<ColoredPointCloud, CloudError> {
    estimate_normals_capped(cloud, neighborhood_radius, usize::MAX, viewpoint)
}

/// As [`estimate_normals`], using at most `max_nn` closest neighbors.
pub fn estimate_normals_capped(
    cloud: &ColoredPointCloud,
    neighborhood_radius: f64,
    max_nn: usize,
    viewpoint: &Vector3<f64>,
) -> Result<ColoredPointCloud, CloudError> {
    if !(neighborhood_radius > 0.0) {
        return Err(CloudError::NonPositiveRadius(neighborhood_radius));
    }
    if cloud.len() < 3 {
        return Err(CloudError::TooFewPoints(cloud.len()));
    }
    let index = cloud.index();
    let mut hits = Vec::new();
    let normals = cloud
        .points
        .iter()
        .map(|p| {
            index.hybrid(p, neighborhood_radius, max_nn, &mut hits);
            if hits.len() < 3 {
                return Vector3::zeros();
            }
            let n = covariance_normal(hits.iter().map(|&(j, _)| &cloud.points[j]));
            match n {
                Some(n) if n.dot(&(viewpoint - p)) < 0.0 => -n,
                Some(n) => n,
                None => Vector3::zeros(),
            }
        })
        .collect();
    Ok(ColoredPointCloud { points: cloud.points.clone(), colors: cloud.colors.clone(), normals: Some(normals) })
}

fn covariance_normal<'a>(points: impl Iterator<Item = &'a Vector3<f64>> + Clone) -> Option<Vector3<f64>> {
    let mut n = 0usize;
    let mut mean = Vector3::zeros();
    for p in points.clone() {
        mean += p;
        n += 1;
    }
    mean /= n as f64;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let i = eig.eigenvalues.imin();
    let v: Vector3<f64> = eig.eigenvectors.column(i).into_owned();
    let norm = v.norm();
    (norm > 0.0 && norm.is_finite()).then(|| v / norm)
}

/// Maps points by `t` and rotates normals; colors are untouched.
pub fn transform_cloud(cloud: &ColoredPointCloud, t: &RigidTransform) -> ColoredPointCloud {
    ColoredPointCloud {
        points: cloud.points.iter().map(|p| t.apply(p)).collect(),
        colors: cloud.colors.clone(),
        normals: cloud.normals.as_ref().map(|n| n.iter().map(|v| t.apply_vector(v)).collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose6D;
    use approx::assert_abs_diff_eq;

    fn grid_plane(n: usize, spacing: f64) -> ColoredPointCloud {
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                pts.push(Vector3::new(i as f64 * spacing, j as f64 * spacing, 0.0));
            }
        }
        ColoredPointCloud::from_points(pts, Vector3::repeat(0.5))
    }

    #[test]
    fn construction_checks_invariants() {
        let p = vec![Vector3::zeros(); 2];
        assert!(matches!(
            ColoredPointCloud::new(p.clone(), vec![Vector3::zeros()], None),
            Err(CloudError::LengthMismatch { .. })
        ));
        assert!(matches!(
            ColoredPointCloud::new(p.clone(), vec![Vector3::repeat(1.5); 2], None),
            Err(CloudError::ColorOutOfRange(_))
        ));
        assert!(matches!(
            ColoredPointCloud::new(p.clone(), vec![Vector3::zeros(); 2], Some(vec![Vector3::new(0.0, 0.0, 2.0); 2])),
            Err(CloudError::BadNormal { .. })
        ));
        let ok = ColoredPointCloud::new(p, vec![Vector3::zeros(); 2], Some(vec![Vector3::zeros(), Vector3::z()]));
        assert!(ok.is_ok());
    }

    #[test]
    fn downsample_examples() {
        let two = ColoredPointCloud::from_points(vec![Vector3::new(0.001, 0.001, 0.001); 2], Vector3::repeat(0.2));
        assert_eq!(voxel_downsample(&two, 0.01).unwrap().len(), 1);

        let mut corners = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    corners.push(Vector3::new(x, y, z));
                }
            }
        }
        let cube = ColoredPointCloud::from_points(corners, Vector3::repeat(0.5));
        let d = voxel_downsample(&cube, 10.0).unwrap();
        assert_eq!(d.len(), 1);
        assert_abs_diff_eq!(d.points()[0], Vector3::repeat(0.5), epsilon = 1e-15);

        // Grid spacing 0.1, offset off the voxel boundaries.
        let grid = transform_cloud(&grid_plane(10, 0.1), &RigidTransform::from_translation(0.025, 0.025, 0.025));
        assert_eq!(voxel_downsample(&grid, 0.05).unwrap().len(), grid.len());

        assert!(matches!(voxel_downsample(&grid, 0.0), Err(CloudError::NonPositiveVoxel(_))));
        assert!(matches!(voxel_downsample(&grid, -1.0), Err(CloudError::NonPositiveVoxel(_))));
    }

    #[test]
    fn downsample_averages_normals_and_colors() {
        let c = ColoredPointCloud::new(
            vec![Vector3::zeros(), Vector3::new(0.001, 0.0, 0.0)],
            vec![Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 0.0, 1.0)],
            Some(vec![Vector3::x(), Vector3::y()]),
        )
        .unwrap();
        let d = voxel_downsample(&c, 0.01).unwrap();
        assert_abs_diff_eq!(d.colors()[0], Vector3::new(0.5, 0.0, 0.5));
        assert_abs_diff_eq!(d.normals().unwrap()[0], Vector3::new(1.0, 1.0, 0.0).normalize(), epsilon = 1e-15);
    }

    #[test]
    fn plane_normals_follow_viewpoint() {
        let plane = grid_plane(20, 0.01);
        let up = estimate_normals(&plane, 0.025, &Vector3::new(0.0, 0.0, 1.0)).unwrap();
        for n in up.normals().unwrap() {
            assert_abs_diff_eq!(*n, Vector3::z(), epsilon = 1e-6);
        }
        let down = estimate_normals(&plane, 0.025, &Vector3::new(0.0, 0.0, -1.0)).unwrap();
        for n in down.normals().unwrap() {
            assert_abs_diff_eq!(*n, -Vector3::z(), epsilon = 1e-6);
        }
    }

    #[test]
    fn sphere_normals_point_inward_toward_center() {
        // Fibonacci sphere: dense, near-uniform sampling.
        let n = 4000;
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let pts: Vec<Vector3<f64>> = (0..n)
            .map(|i| {
                let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - y * y).sqrt();
                let th = golden * i as f64;
                Vector3::new(r * th.cos(), y, r * th.sin())
            })
            .collect();
        let sphere = ColoredPointCloud::from_points(pts, Vector3::repeat(0.5));
        let with = estimate_normals(&sphere, 0.12, &Vector3::zeros()).unwrap();
        for (p, nrm) in with.points().iter().zip(with.normals().unwrap()) {
            assert!((nrm + p.normalize()).norm() < 0.05);
        }
    }

    #[test]
    fn sparse_points_get_zero_flag() {
        let c = ColoredPointCloud::from_points(
            vec![Vector3::zeros(), Vector3::new(0.001, 0.0, 0.0), Vector3::new(0.0, 0.001, 0.0), Vector3::new(5.0, 5.0, 5.0)],
            Vector3::repeat(0.5),
        );
        let n = estimate_normals(&c, 0.01, &Vector3::new(0.0, 0.0, 1.0)).unwrap();
        let normals = n.normals().unwrap();
        assert_abs_diff_eq!(normals[0], Vector3::z(), epsilon = 1e-9);
        assert_eq!(normals[3], Vector3::zeros());
        assert!(matches!(estimate_normals(&c, 0.0, &Vector3::zeros()), Err(CloudError::NonPositiveRadius(_))));
        let tiny = c.select(&[0, 1]);
        assert!(matches!(estimate_normals(&tiny, 0.1, &Vector3::zeros()), Err(CloudError::TooFewPoints(2))));
    }

    #[test]
    fn transform_examples() {
        let c = ColoredPointCloud::new(
            vec![Vector3::zeros(), Vector3::new(0.3, -0.2, 1.0)],
            vec![Vector3::new(0.1, 0.2, 0.3); 2],
            Some(vec![Vector3::z(), Vector3::x()]),
        )
        .unwrap();
        assert_eq!(transform_cloud(&c, &RigidTransform::identity()), c);
        let moved = transform_cloud(&c, &RigidTransform::from_translation(1.0, 0.0, 0.0));
        assert_eq!(moved.points()[0], Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(moved.normals().unwrap()[0], Vector3::z());

        let t = RigidTransform::from_pose6d(&Pose6D::new(0.2, 0.1, -0.4, 10.0, -20.0, 30.0));
        let back = transform_cloud(&transform_cloud(&c, &t), &t.inverse());
        for (a, b) in back.points().iter().zip(c.points()) {
            assert!((a - b).norm() < 1e-9);
        }
        assert_eq!(back.colors(), c.colors());
    }
}
