use proptest::prelude::*;
use rigidflow_core::geometry::{project_pixel, rigid_flow, so3_exp, so3_log};
use rigidflow_core::{DepthMap, Intrinsics, Mat3, PoseParams, PoseSE3, Vec3};

type M4 = [[f64; 4]; 4];

fn homogeneous(p: &PoseSE3) -> M4 {
    let mut m = [[0.0; 4]; 4];
    for (i, row) in m.iter_mut().enumerate().take(3) {
        row[..3].copy_from_slice(&p.rotation.0[i]);
        row[3] = p.translation.0[i];
    }
    m[3][3] = 1.0;
    m
}

fn matmul4(a: &M4, b: &M4) -> M4 {
    let mut c = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            c[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

fn max_diff4(a: &M4, b: &M4) -> f64 {
    (0..16)
        .map(|i| (a[i / 4][i % 4] - b[i / 4][i % 4]).abs())
        .fold(0.0, f64::max)
}

/// `exp(Ŵ)` summed as a power series, independent of the closed form.
fn exp_series(w: [f64; 3]) -> [[f64; 3]; 3] {
    let hat = [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]];
    let mut sum = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mut term = sum;
    for n in 1..40 {
        let mut next = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                next[i][j] = (0..3).map(|k| term[i][k] * hat[k][j]).sum::<f64>() / n as f64;
            }
        }
        term = next;
        for i in 0..3 {
            for j in 0..3 {
                sum[i][j] += term[i][j];
            }
        }
    }
    sum
}

fn camera() -> Intrinsics {
    Intrinsics::new(120.0, 110.0, 31.5, 23.5).unwrap()
}

fn pose_params() -> impl Strategy<Value = [f64; 6]> {
    (prop::array::uniform3(-0.8f64..0.8), prop::array::uniform3(-2.0f64..2.0))
        .prop_map(|(w, t)| [w[0], w[1], w[2], t[0], t[1], t[2]])
}

#[test]
fn exp_matches_power_series() {
    for w in [[0.3, -0.2, 0.5], [1e-9, 0.0, -2e-9], [0.0, 2.5, 0.0], [-1.0, 1.0, 1.0]] {
        let closed = so3_exp(&Vec3(w));
        assert!(closed.max_abs_diff(&Mat3(exp_series(w))) < 1e-13, "{w:?}");
    }
}

#[test]
fn projection_matches_hand_computation() {
    // Pixel (10, 4) at depth 2: X = 2 ((10 - 31.5)/120, (4 - 23.5)/110, 1).
    let k = camera();
    let pose = PoseSE3::from_translation(Vec3::new(0.5, -0.25, 1.0));
    let (x, y, z) = (
        2.0 * (10.0 - 31.5) / 120.0 + 0.5,
        2.0 * (4.0 - 23.5) / 110.0 - 0.25,
        3.0,
    );
    let p = project_pixel(10.0, 4.0, 2.0, &k, &pose);
    assert!((p.x - (120.0 * x / z + 31.5)).abs() < 1e-12);
    assert!((p.y - (110.0 * y / z + 23.5)).abs() < 1e-12);
    assert_eq!(p.z, 3.0);
}

proptest! {
    #[test]
    fn compose_matches_homogeneous_product(a in pose_params(), b in pose_params()) {
        let (pa, pb) = (PoseParams(a).to_pose(), PoseParams(b).to_pose());
        let composed = homogeneous(&pa.compose(&pb));
        prop_assert!(max_diff4(&composed, &matmul4(&homogeneous(&pa), &homogeneous(&pb))) < 1e-12);
    }

    #[test]
    fn inverse_composes_to_identity(a in pose_params()) {
        let p = PoseParams(a).to_pose();
        let id = homogeneous(&PoseSE3::IDENTITY);
        prop_assert!(max_diff4(&homogeneous(&p.compose(&p.inverse())), &id) < 1e-12);
        prop_assert!(max_diff4(&homogeneous(&p.inverse().compose(&p)), &id) < 1e-12);
    }

    #[test]
    fn log_inverts_exp(w in prop::array::uniform3(-1.7f64..1.7)) {
        prop_assume!(Vec3(w).norm() < 3.0);
        let back = so3_log(&so3_exp(&Vec3(w)));
        for (b, w) in back.0.iter().zip(w) {
            prop_assert!((b - w).abs() < 1e-9);
        }
    }

    #[test]
    fn exp_is_a_rotation(w in prop::array::uniform3(-3.0f64..3.0)) {
        let r = so3_exp(&Vec3(w));
        prop_assert!((r.transpose() * r).max_abs_diff(&Mat3::IDENTITY) < 1e-12);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn flow_is_invariant_to_joint_depth_translation_scaling(
        a in pose_params(),
        s in 0.1f64..10.0,
        seed in any::<u64>(),
    ) {
        let k = camera();
        let depth = DepthMap::from_fn(8, 6, |x, y| 3.0 + ((x * 7 + y * 13) as u64 ^ seed) as f64 % 5.0).unwrap();
        let scaled_depth = DepthMap::from_fn(8, 6, |x, y| s * depth.get(x, y)).unwrap();
        let pose = PoseParams(a).to_pose();
        let scaled_pose = PoseSE3 { rotation: pose.rotation, translation: pose.translation * s };
        let (f1, m1) = rigid_flow(&depth, &k, &pose);
        let (f2, m2) = rigid_flow(&scaled_depth, &k, &scaled_pose);
        prop_assert_eq!(m1.bits(), m2.bits());
        for i in 0..48 {
            if m1.at(i) {
                prop_assert!((f1.u()[i] - f2.u()[i]).abs() < 1e-8 * (1.0 + f1.u()[i].abs()));
                prop_assert!((f1.v()[i] - f2.v()[i]).abs() < 1e-8 * (1.0 + f1.v()[i].abs()));
            }
        }
    }

    #[test]
    fn projecting_back_returns_to_the_pixel(
        a in pose_params(),
        x in 0.0f64..63.0,
        y in 0.0f64..47.0,
        d in 1.0f64..20.0,
    ) {
        let k = camera();
        let pose = PoseParams(a).to_pose();
        let fwd = project_pixel(x, y, d, &k, &pose);
        prop_assume!(fwd.z > 1e-3);
        let back = project_pixel(fwd.x, fwd.y, fwd.z, &k, &pose.inverse());
        prop_assert!((back.x - x).abs() < 1e-7);
        prop_assert!((back.y - y).abs() < 1e-7);
        prop_assert!((back.z - d).abs() < 1e-9 * d);
    }
}
