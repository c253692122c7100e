//! Fast Point Feature Histograms.

use std::f64::consts::PI;

use nalgebra::Vector3;

use super::RegistrationError;
use crate::pointcloud::{ColoredPointCloud, SpatialIndex};

pub const FPFH_BINS: usize = 33;
const SUB_BINS: usize = 11;

/// 33-bin descriptor: three 11-bin histograms of the Darboux-frame angles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpfhFeature(pub [f64; FPFH_BINS]);

impl FpfhFeature {
    pub fn zeros() -> Self {
        Self([0.0; FPFH_BINS])
    }

    pub fn distance_squared(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.distance_squared(other).sqrt()
    }
}

/// Pair features `(alpha-like angle, phi, theta)` between two oriented
/// points; `None` for coincident points or parallel configurations.
fn pair_features(p1: &Vector3<f64>, n1: &Vector3<f64>, p2: &Vector3<f64>, n2: &Vector3<f64>) -> Option<[f64; 3]> {
    let mut dp = p2 - p1;
    let dist = dp.norm();
    if dist == 0.0 {
        return None;
    }
    let angle1 = n1.dot(&dp) / dist;
    let angle2 = n2.dot(&dp) / dist;
    let (u, n_other, f3) = if angle1.abs().acos() > angle2.abs().acos() {
        dp = -dp;
        (n2, n1, -angle2)
    } else {
        (n1, n2, angle1)
    };
    let v = dp.cross(u);
    let v_norm = v.norm();
    if v_norm == 0.0 {
        return None;
    }
    let v = v / v_norm;
    let w = u.cross(&v);
    let f2 = v.dot(n_other);
    let f1 = w.dot(n_other).atan2(u.dot(n_other));
    Some([f1, f2, f3])
}

fn bin(value: f64, lo: f64, hi: f64) -> usize {
    let idx = (SUB_BINS as f64 * (value - lo) / (hi - lo)).floor();
    (idx.max(0.0) as usize).min(SUB_BINS - 1)
}

fn is_valid(n: &Vector3<f64>) -> bool {
    n.norm_squared() > 0.25
}

/// FPFH for every point using all neighbors within `feature_radius`.
pub fn compute_fpfh(cloud: &ColoredPointCloud, feature_radius: f64) -> Result<Vec<FpfhFeature>, RegistrationError> {
    compute_fpfh_capped(cloud, feature_radius, usize::MAX)
}

/// FPFH using at most the `max_nn` closest neighbors within the radius.
///
/// Points with no usable neighbors (or a zero-flagged normal) get an
/// all-zero histogram.
pub fn compute_fpfh_capped(
    cloud: &ColoredPointCloud,
    feature_radius: f64,
    max_nn: usize,
) -> Result<Vec<FpfhFeature>, RegistrationError> {
    let normals = cloud.normals().ok_or(RegistrationError::MissingNormals("feature computation"))?;
    if cloud.len() < 2 {
        return Err(RegistrationError::TooFewPoints { stage: "features", got: cloud.len() });
    }
    if !(feature_radius > 0.0) {
        return Err(RegistrationError::InvalidParams(format!("feature radius must be positive, got {feature_radius}")));
    }
    let points = cloud.points();
    let index = SpatialIndex::new(points);
    let mut hits = Vec::new();
    let mut neighborhoods: Vec<Vec<(usize, f64)>> = Vec::with_capacity(points.len());
    let mut spfh = vec![FpfhFeature::zeros(); points.len()];
    for i in 0..points.len() {
        // max_nn + 1 so that the query point itself does not use up a slot.
        index.hybrid(&points[i], feature_radius, max_nn.saturating_add(1), &mut hits);
        let neighbors: Vec<(usize, f64)> =
            hits.iter().copied().filter(|&(j, d)| j != i && d > 0.0 && is_valid(&normals[j])).collect();
        if is_valid(&normals[i]) && !neighbors.is_empty() {
            let incr = 100.0 / neighbors.len() as f64;
            let h = &mut spfh[i].0;
            for &(j, _) in &neighbors {
                if let Some([f1, f2, f3]) = pair_features(&points[i], &normals[i], &points[j], &normals[j]) {
                    h[bin(f1, -PI, PI)] += incr;
                    h[SUB_BINS + bin(f2, -1.0, 1.0)] += incr;
                    h[2 * SUB_BINS + bin(f3, -1.0, 1.0)] += incr;
                }
            }
        }
        neighborhoods.push(neighbors);
    }

    let features = (0..points.len())
        .map(|i| {
            if !is_valid(&normals[i]) {
                return FpfhFeature::zeros();
            }
            let mut acc = [0.0; FPFH_BINS];
            let mut sums = [0.0; 3];
            for &(j, d2) in &neighborhoods[i] {
                for (k, v) in spfh[j].0.iter().enumerate() {
                    let w = v / d2;
                    acc[k] += w;
                    sums[k / SUB_BINS] += w;
                }
            }
            let mut out = [0.0; FPFH_BINS];
            for k in 0..FPFH_BINS {
                let s = sums[k / SUB_BINS];
                let scale = if s != 0.0 { 100.0 / s } else { 0.0 };
                out[k] = acc[k] * scale + spfh[i].0[k];
            }
            FpfhFeature(out)
        })
        .collect();
    Ok(features)
}
