//! Feature-matched global registration with a graduated robust kernel.

use nalgebra::{Matrix6, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::fpfh::FpfhFeature;
use super::icp::damped_step;
use super::{evaluate_alignment, RegistrationError, RegistrationFailure, RegistrationParams, RegistrationResult, Stage};
use crate::geometry::RigidTransform;
use crate::pointcloud::ColoredPointCloud;

fn nearest_feature(query: &FpfhFeature, pool: &[FpfhFeature]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (j, f) in pool.iter().enumerate() {
        let d = query.distance_squared(f);
        if d < best.1 {
            best = (j, d);
        }
    }
    best.0
}

/// Mutual nearest neighbors in feature space.
pub fn mutual_feature_matches(source: &[FpfhFeature], target: &[FpfhFeature]) -> Vec<(usize, usize)> {
    if source.is_empty() || target.is_empty() {
        return Vec::new();
    }
    let s_to_t: Vec<usize> = source.iter().map(|f| nearest_feature(f, target)).collect();
    let mut t_to_s: Vec<Option<usize>> = vec![None; target.len()];
    let mut out = Vec::new();
    for (i, &j) in s_to_t.iter().enumerate() {
        let back = *t_to_s[j].get_or_insert_with(|| nearest_feature(&target[j], source));
        if back == i {
            out.push((i, j));
        }
    }
    out
}

/// Keeps correspondences that survive random triplet tests: for three
/// picked pairs, the side lengths of the source and target triangles must
/// agree within `tuple_scale`.
pub fn tuple_filter(
    src: &[Vector3<f64>],
    tgt: &[Vector3<f64>],
    matches: &[(usize, usize)],
    tuple_scale: f64,
    max_tuples: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize)> {
    let n = matches.len();
    if n < 3 {
        return Vec::new();
    }
    let mut keep = vec![false; n];
    let mut accepted = 0;
    let trials = 100 * n;
    let ok = |a: f64, b: f64| a * tuple_scale < b && b < a / tuple_scale;
    for _ in 0..trials {
        if accepted >= max_tuples {
            break;
        }
        let ids = [rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0..n)];
        if ids[0] == ids[1] || ids[1] == ids[2] || ids[0] == ids[2] {
            continue;
        }
        let m = ids.map(|k| matches[k]);
        let mut good = true;
        for (a, b) in [(0, 1), (1, 2), (2, 0)] {
            let ds = (src[m[a].0] - src[m[b].0]).norm();
            let dt = (tgt[m[a].1] - tgt[m[b].1]).norm();
            if !ok(ds, dt) {
                good = false;
                break;
            }
        }
        if good {
            for k in ids {
                keep[k] = true;
            }
            accepted += 1;
        }
    }
    matches.iter().zip(&keep).filter(|(_, &k)| k).map(|(m, _)| *m).collect()
}

/// Default graduated non-convexity schedule: starts at the squared extent of
/// the data and halves down to the squared coarse voxel size.
pub fn default_mu_schedule(src: &[Vector3<f64>], tgt: &[Vector3<f64>], coarse_voxel: f64) -> Vec<f64> {
    let extent = |pts: &[Vector3<f64>]| {
        if pts.is_empty() {
            return 0.0;
        }
        let c = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
        pts.iter().map(|p| (p - c).norm()).fold(0.0, f64::max)
    };
    let floor = coarse_voxel * coarse_voxel;
    let mut mu = extent(src).max(extent(tgt)).powi(2).max(floor);
    let mut out = vec![mu];
    while mu > floor {
        mu = (mu / 2.0).max(floor);
        out.push(mu);
    }
    out
}

const INNER_ITERATIONS: usize = 4;

/// Robust alignment of fixed correspondences with Geman-McClure weights,
/// solved by Gauss-Newton while the kernel width follows `mu_schedule`.
pub fn robust_align(
    src: &[Vector3<f64>],
    tgt: &[Vector3<f64>],
    pairs: &[(usize, usize)],
    mu_schedule: &[f64],
) -> RigidTransform {
    let mut t = RigidTransform::identity();
    for &mu in mu_schedule {
        for _ in 0..INNER_ITERATIONS {
            let mut h = Matrix6::<f64>::zeros();
            let mut g = Vector6::<f64>::zeros();
            for &(i, j) in pairs {
                let p = t.apply(&src[i]);
                let r = p - tgt[j];
                let w = (mu / (mu + r.norm_squared())).powi(2);
                // Residual r(xi) = exp(xi) p - q; rows [-[p]x | I].
                for axis in 0..3 {
                    let mut jrow = Vector6::<f64>::zeros();
                    let e = Vector3::ith(axis, 1.0);
                    let rot = p.cross(&e);
                    jrow.fixed_rows_mut::<3>(0).copy_from(&rot);
                    jrow[3 + axis] = 1.0;
                    h += w * jrow * jrow.transpose();
                    g += w * jrow * r[axis];
                }
            }
            let Some(xi) = damped_step(&h, &g) else { break };
            let omega = Vector3::new(xi[0], xi[1], xi[2]);
            let trans = Vector3::new(xi[3], xi[4], xi[5]);
            t = RigidTransform::from_increment(&omega, &trans).compose(&t);
        }
    }
    t
}

/// Global registration of two preprocessed clouds (with normals) from their
/// FPFH features. Correspondence failures are reported through
/// `converged = false` rather than as errors.
pub fn fast_global_registration(
    source: &ColoredPointCloud,
    target: &ColoredPointCloud,
    source_features: &[FpfhFeature],
    target_features: &[FpfhFeature],
    params: &RegistrationParams,
) -> Result<RegistrationResult, RegistrationError> {
    params.validate()?;
    if source_features.len() != source.len() || target_features.len() != target.len() {
        return Err(RegistrationError::InvalidParams("feature count does not match cloud size".into()));
    }
    if source.is_empty() || target.is_empty() {
        return Err(RegistrationError::TooFewPoints { stage: "global", got: source.len().min(target.len()) });
    }
    let coarse = params.voxel_pyramid[0];
    let max_dist = params.correspondence_distance_factor * coarse;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let matches = mutual_feature_matches(source_features, target_features);
    let pairs = tuple_filter(source.points(), target.points(), &matches, params.tuple_scale, params.max_tuples, &mut rng);
    if pairs.len() < params.min_correspondences {
        let mut result = RegistrationResult::failed(RegistrationFailure::TooFewCorrespondences {
            stage: Stage::Global,
            found: pairs.len(),
            required: params.min_correspondences,
        });
        result.correspondences = pairs.len();
        return Ok(result);
    }
    let schedule = if params.gnc_mu_schedule.is_empty() {
        default_mu_schedule(source.points(), target.points(), coarse)
    } else {
        params.gnc_mu_schedule.clone()
    };
    let transform = robust_align(source.points(), target.points(), &pairs, &schedule);
    let eval = evaluate_alignment(source, &target.index(), &transform, max_dist);
    Ok(RegistrationResult {
        transform,
        fitness: eval.fitness,
        inlier_rmse: eval.inlier_rmse,
        converged: true,
        failure: None,
        objective_history: Vec::new(),
        correspondences: pairs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RotationMatrix;

    fn scattered(n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.1..0.1)))
            .collect()
    }

    #[test]
    fn robust_align_rejects_outliers() {
        let src = scattered(200, 1);
        let truth = RigidTransform::new(RotationMatrix::rot_z(20.0).mul(&RotationMatrix::rot_x(-7.0)), Vector3::new(0.1, -0.05, 0.02));
        let mut tgt: Vec<Vector3<f64>> = src.iter().map(|p| truth.apply(p)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // 30% gross outliers.
        for p in tgt.iter_mut().take(60) {
            *p = Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
        }
        let pairs: Vec<(usize, usize)> = (0..200).map(|i| (i, i)).collect();
        let schedule = default_mu_schedule(&src, &tgt, 0.01);
        let est = robust_align(&src, &tgt, &pairs, &schedule);
        assert!(est.max_abs_diff(&truth) < 1e-3, "{}", est.max_abs_diff(&truth));
    }

    #[test]
    fn tuple_filter_drops_inconsistent_pairs() {
        let src = scattered(100, 3);
        let truth = RigidTransform::new(RotationMatrix::rot_y(15.0), Vector3::new(0.0, 0.2, 0.0));
        let tgt: Vec<Vector3<f64>> = src.iter().map(|p| truth.apply(p)).collect();
        let mut matches: Vec<(usize, usize)> = (0..80).map(|i| (i, i)).collect();
        matches.extend((80..100).map(|i| (i, 99 - (i - 80))));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let kept = tuple_filter(&src, &tgt, &matches, 0.95, 1000, &mut rng);
        let good = kept.iter().filter(|(a, b)| a == b).count();
        assert!(good > 70);
        assert!(kept.len() - good < 10, "{} wrong pairs kept", kept.len() - good);
    }

    #[test]
    fn mutual_matches_are_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mk = |rng: &mut ChaCha8Rng| {
            let mut f = [0.0; 33];
            for v in f.iter_mut() {
                *v = rng.random_range(0.0..10.0);
            }
            FpfhFeature(f)
        };
        let a: Vec<FpfhFeature> = (0..40).map(|_| mk(&mut rng)).collect();
        let b: Vec<FpfhFeature> = a.iter().rev().cloned().collect();
        let m = mutual_feature_matches(&a, &b);
        assert_eq!(m.len(), 40);
        assert!(m.iter().all(|&(i, j)| j == 39 - i));
    }

    #[test]
    fn schedule_ends_at_floor() {
        let pts = scattered(50, 4);
        let s = default_mu_schedule(&pts, &pts, 0.04);
        assert!(s.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(*s.last().unwrap(), 0.04 * 0.04);
    }
}
