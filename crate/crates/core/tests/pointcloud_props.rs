use mmpa_core::pointcloud::{voxel_downsample, ColoredPointCloud, SpatialIndex};
use nalgebra::Vector3;
use proptest::prelude::*;

fn points(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Vector3<f64>>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(x, y, z)| Vector3::new(x, y, z)), n)
}

fn brute_nearest(pts: &[Vector3<f64>], q: &Vector3<f64>) -> f64 {
    pts.iter().map(|p| (p - q).norm_squared()).fold(f64::INFINITY, f64::min)
}

proptest! {
    #[test]
    fn nearest_matches_brute_force(pts in points(1..300), qs in points(1..20)) {
        let index = SpatialIndex::new(&pts);
        for q in &qs {
            let (i, d2) = index.nearest(q).unwrap();
            prop_assert!((d2 - brute_nearest(&pts, q)).abs() < 1e-12);
            prop_assert!(((pts[i] - q).norm_squared() - d2).abs() < 1e-12);
        }
    }

    #[test]
    fn knn_is_sorted_and_exact(pts in points(1..200), q in points(1..2), k in 1usize..12) {
        let index = SpatialIndex::new(&pts);
        let got = index.knn(&q[0], k);
        let mut all: Vec<f64> = pts.iter().map(|p| (p - q[0]).norm_squared()).collect();
        all.sort_by(f64::total_cmp);
        prop_assert_eq!(got.len(), k.min(pts.len()));
        for (g, want) in got.iter().zip(&all) {
            prop_assert!((g.1 - want).abs() < 1e-12);
        }
    }

    #[test]
    fn radius_search_is_complete(pts in points(1..200), q in points(1..2), r in 0.05..1.0f64) {
        let index = SpatialIndex::new(&pts);
        let got = index.radius(&q[0], r).len();
        let want = pts.iter().filter(|p| (*p - q[0]).norm() <= r).count();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn voxel_downsample_keeps_one_point_per_cell(pts in points(1..400), voxel in 0.05..0.8f64) {
        let cloud = ColoredPointCloud::from_points(pts.clone(), Vector3::new(0.5, 0.5, 0.5));
        let down = voxel_downsample(&cloud, voxel).unwrap();
        let cell = |p: &Vector3<f64>| ((p.x / voxel).floor() as i64, (p.y / voxel).floor() as i64, (p.z / voxel).floor() as i64);
        let occupied: std::collections::HashSet<_> = pts.iter().map(cell).collect();
        prop_assert_eq!(down.len(), occupied.len());
        prop_assert!(down.len() <= cloud.len());
        // Every output point is a centroid, so it lies within the bounds of the input.
        for p in down.points() {
            prop_assert!(p.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn voxel_downsample_is_idempotent_on_spread_points(pts in points(1..100)) {
        let cloud = ColoredPointCloud::from_points(pts, Vector3::zeros());
        let once = voxel_downsample(&cloud, 0.5).unwrap();
        let twice = voxel_downsample(&once, 0.5).unwrap();
        prop_assert!(twice.len() <= once.len());
    }
}
