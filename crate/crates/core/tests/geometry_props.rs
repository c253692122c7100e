use mmpa_core::geometry::{
    compose, invert, pose6d_to_transform, relative_base_pose, rotation_error, transform_to_pose6d, Pose6D, RigidTransform,
    RotationMatrix,
};
use nalgebra::Vector3;
use proptest::prelude::*;
use proptest::strategy::ValueTree;

fn vec3(r: f64) -> impl Strategy<Value = Vector3<f64>> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn transform() -> impl Strategy<Value = RigidTransform> {
    (vec3(3.0), vec3(2.0)).prop_map(|(w, t)| RigidTransform::new(RotationMatrix::exp(&w), t))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn composition_is_associative(a in transform(), b in transform(), c in transform()) {
        let left = compose(&compose(&a, &b), &c);
        let right = compose(&a, &compose(&b, &c));
        prop_assert!(left.max_abs_diff(&right) < 1e-12);
    }

    #[test]
    fn inverse_cancels(a in transform()) {
        prop_assert!(compose(&a, &invert(&a)).max_abs_diff(&RigidTransform::identity()) < 1e-12);
        prop_assert!(compose(&invert(&a), &a).max_abs_diff(&RigidTransform::identity()) < 1e-12);
    }

    #[test]
    fn compose_applies_right_operand_first(a in transform(), b in transform(), p in vec3(1.0)) {
        let direct = a.apply(&b.apply(&p));
        prop_assert!((compose(&a, &b).apply(&p) - direct).norm() < 1e-12);
    }

    #[test]
    fn euler_round_trip_away_from_gimbal_lock(
        t in vec3(2.0), roll in -179.9..179.9f64, pitch in -89.0..89.0f64, yaw in -179.9..179.9f64
    ) {
        let p = Pose6D::new(t.x, t.y, t.z, roll, pitch, yaw);
        let d = transform_to_pose6d(&pose6d_to_transform(&p));
        prop_assert!(!d.gimbal_locked);
        for (x, y) in d.pose.as_array().iter().zip(p.as_array()) {
            prop_assert!((x - y).abs() < 1e-9, "{:?} vs {:?}", d.pose, p);
        }
    }

    #[test]
    fn euler_decomposition_reproduces_the_transform(a in transform()) {
        let back = pose6d_to_transform(&transform_to_pose6d(&a).pose);
        prop_assert!(back.max_abs_diff(&a) < 1e-9);
    }

    #[test]
    fn rotation_error_is_chordal_and_symmetric(a in transform(), b in transform()) {
        let e = rotation_error(&a.rotation, &b.rotation);
        prop_assert!((e - (a.rotation.matrix() - b.rotation.matrix()).norm()).abs() < 1e-12);
        prop_assert!((e - rotation_error(&b.rotation, &a.rotation)).abs() < 1e-12);
        prop_assert!(e <= 2.0 * 2f64.sqrt() + 1e-12);
    }

    #[test]
    fn base_pose_from_forward_composed_camera_delta(db in transform(), et in transform(), en in transform()) {
        let dc = compose(&compose(&invert(&en), &db), &et);
        prop_assert!(relative_base_pose(&dc, &et, &en).max_abs_diff(&db) < 1e-9);
    }
}

#[test]
fn thousand_case_frame_transfer_oracle() {
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let strategy = (transform(), transform(), transform());
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (db, et, en) = strategy.new_tree(&mut runner).unwrap().current();
        let dc = en.inverse().compose(&db).compose(&et);
        worst = worst.max(relative_base_pose(&dc, &et, &en).max_abs_diff(&db));
    }
    assert!(worst < 1e-9, "max error {worst}");
}

#[test]
fn half_turn_has_the_maximal_error() {
    let e = rotation_error(&RotationMatrix::rot_z(180.0), &RotationMatrix::identity());
    assert!((e - 2.0 * 2f64.sqrt()).abs() <= 4.0 * f64::EPSILON);
    assert_eq!(rotation_error(&RotationMatrix::rot_x(33.0), &RotationMatrix::rot_x(33.0)), 0.0);
}
