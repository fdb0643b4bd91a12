mod common;

use common::hull_oracle;
use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roa_core::geometry::{
    project_box, project_point, unproject, Box3D, Camera, Extrinsics, Intrinsics, DEFAULT_NEAR,
};
use roa_core::scene::synthetic_rig;
use roa_core::Error;

fn pinhole() -> Intrinsics {
    Intrinsics::new(100.0, 100.0, 352.0, 128.0, 704, 256).unwrap()
}

fn identity() -> Extrinsics {
    Extrinsics::identity()
}

#[test]
fn optical_axis_and_lateral_offset() {
    let p = project_point(&Vector3::new(0.0, 0.0, 10.0), &identity(), &pinhole(), DEFAULT_NEAR).unwrap();
    assert_eq!((p.u, p.v, p.depth), (352.0, 128.0, 10.0));
    let p = project_point(&Vector3::new(1.0, 0.0, 10.0), &identity(), &pinhole(), DEFAULT_NEAR).unwrap();
    assert_eq!((p.u, p.v, p.depth), (362.0, 128.0, 10.0));
    let err = project_point(&Vector3::new(0.0, 0.0, -1.0), &identity(), &pinhole(), DEFAULT_NEAR).unwrap_err();
    assert!(matches!(err, Error::BehindCamera { .. }));
}

#[test]
fn scale_consistency() {
    let intr = pinhole();
    let a = project_point(&Vector3::new(0.0, 0.0, 5.0), &identity(), &intr, DEFAULT_NEAR).unwrap();
    let b = project_point(&Vector3::new(0.0, 0.0, 10.0), &identity(), &intr, DEFAULT_NEAR).unwrap();
    assert_eq!((a.u, a.v), (b.u, b.v));
    let one = project_point(&Vector3::new(0.7, -0.3, 8.0), &identity(), &intr, DEFAULT_NEAR).unwrap();
    let two = project_point(&Vector3::new(1.4, -0.6, 8.0), &identity(), &intr, DEFAULT_NEAR).unwrap();
    assert!(((two.u - intr.cx) - 2.0 * (one.u - intr.cx)).abs() < 1e-12);
    assert!(((two.v - intr.cy) - 2.0 * (one.v - intr.cy)).abs() < 1e-12);
}

#[test]
fn centered_box_is_symmetric_and_hidden_box_is_not_visible() {
    let b = Box3D { center: [0.0, 0.0, 10.0], size: [2.0, 1.0, 1.5], yaw: 0.0 };
    let r = project_box(&b, &identity(), &pinhole(), DEFAULT_NEAR).unwrap();
    assert!(((r.u_min + r.u_max) / 2.0 - 352.0).abs() < 1e-9);
    assert!(((r.v_min + r.v_max) / 2.0 - 128.0).abs() < 1e-9);
    let behind = Box3D { center: [0.0, 0.0, -10.0], size: [2.0, 1.0, 1.5], yaw: 0.3 };
    assert!(project_box(&behind, &identity(), &pinhole(), DEFAULT_NEAR).is_none());
}

#[test]
fn orthonormalization_tolerance() {
    let r = Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
    let nudged = r + Matrix3::from_element(2e-4);
    let fixed = Extrinsics::orthonormalized(nudged, Vector3::zeros(), 1e-3).unwrap();
    let rt = fixed.rotation().transpose() * fixed.rotation();
    assert!((rt - Matrix3::identity()).abs().max() < 1e-12);
    let skewed = r + Matrix3::from_element(0.05);
    assert!(matches!(
        Extrinsics::orthonormalized(skewed, Vector3::zeros(), 1e-3),
        Err(Error::InvalidRotation(_))
    ));
    let reflection = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
    assert!(Extrinsics::orthonormalized(reflection, Vector3::zeros(), 1e-3).is_err());
}

fn random_camera<R: Rng>(rng: &mut R) -> Camera {
    let rig = synthetic_rig();
    let mut cam = rig[rng.random_range(0..rig.len())];
    cam.intrinsics.fx *= rng.random_range(0.7..1.3);
    cam.intrinsics.fy = cam.intrinsics.fx * rng.random_range(0.95..1.05);
    cam.intrinsics.cx += rng.random_range(-20.0..20.0);
    cam.intrinsics.cy += rng.random_range(-20.0..20.0);
    cam
}

fn random_box<R: Rng>(rng: &mut R) -> Box3D {
    Box3D {
        center: [rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0), rng.random_range(-1.0..3.0)],
        size: [rng.random_range(0.3..10.0), rng.random_range(0.3..4.0), rng.random_range(0.3..4.0)],
        yaw: rng.random_range(-3.2..3.2),
    }
}

#[test]
fn project_box_matches_hull_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut visible = 0;
    for _ in 0..1000 {
        let cam = random_camera(&mut rng);
        let b = random_box(&mut rng);
        let got = project_box(&b, &cam.extrinsics, &cam.intrinsics, DEFAULT_NEAR);
        let want = hull_oracle(&b, &cam, DEFAULT_NEAR);
        match (got, want) {
            (None, None) => {}
            (Some(r), Some([u0, v0, u1, v1])) => {
                visible += 1;
                for (a, e) in [(r.u_min, u0), (r.v_min, v0), (r.u_max, u1), (r.v_max, v1)] {
                    assert!((a - e).abs() < 1e-6, "{a} vs {e}");
                }
            }
            other => panic!("visibility disagrees: {other:?}"),
        }
    }
    assert!(visible > 100, "only {visible} visible boxes exercised");
}

proptest! {
    #[test]
    fn rect_stays_in_bounds(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cam = random_camera(&mut rng);
        let b = random_box(&mut rng);
        if let Some(r) = project_box(&b, &cam.extrinsics, &cam.intrinsics, DEFAULT_NEAR) {
            let (w, h) = (cam.intrinsics.width as f64, cam.intrinsics.height as f64);
            prop_assert!(0.0 <= r.u_min && r.u_min < r.u_max && r.u_max <= w);
            prop_assert!(0.0 <= r.v_min && r.v_min < r.v_max && r.v_max <= h);
        }
    }

    #[test]
    fn unproject_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cam = random_camera(&mut rng);
        let p = Vector3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-2.0..5.0));
        if let Ok(px) = project_point(&p, &cam.extrinsics, &cam.intrinsics, DEFAULT_NEAR) {
            let back = unproject(&px, &cam.extrinsics, &cam.intrinsics);
            prop_assert!((back - p).norm() < 1e-6);
        }
    }
}
