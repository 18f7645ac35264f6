use depthcue::autograd::Tensor;
use depthcue::camgeom::{pose_compose, pose_invert, reproject, warp, DepthMap, Intrinsics, PoseSE3};
use depthcue::synthdata::brute_force_reproject;
use proptest::prelude::*;

fn pose_strategy() -> impl Strategy<Value = PoseSE3> {
    (prop::array::uniform3(-1.5..1.5f64), prop::array::uniform3(-2.0..2.0f64)).prop_map(|(r, t)| PoseSE3::new(r, t))
}

fn intrinsics_strategy(width: usize, height: usize) -> impl Strategy<Value = Intrinsics> {
    (2.0..40.0f64, 2.0..40.0f64, 0.0..1.0f64, 0.0..1.0f64).prop_map(move |(fx, fy, u, v)| {
        Intrinsics::new(fx, fy, u * (width - 1) as f64, v * (height - 1) as f64, width, height).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rotation_is_orthonormal(p in pose_strategy()) {
        let r = p.rotation_matrix();
        let err = (r.transpose() * r - nalgebra::Matrix3::identity()).abs().max();
        prop_assert!(err < 1e-6);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn compose_with_inverse_is_identity(p in pose_strategy()) {
        let id = pose_compose(&p, &pose_invert(&p)).matrix4();
        prop_assert!((id - nalgebra::Matrix4::identity()).abs().max() < 1e-6);
        let id = pose_compose(&pose_invert(&p), &p).matrix4();
        prop_assert!((id - nalgebra::Matrix4::identity()).abs().max() < 1e-6);
    }

    #[test]
    fn compose_applies_right_operand_first(a in pose_strategy(), b in pose_strategy(), x in prop::array::uniform3(-5.0..5.0f64)) {
        let x = nalgebra::Vector3::from(x);
        let chained = a.transform_point(&b.transform_point(&x));
        let composed = a.compose(&b).transform_point(&x);
        prop_assert!((chained - composed).norm() < 1e-9);
    }

    #[test]
    fn seven_numbers_roundtrip(p in pose_strategy()) {
        let q = PoseSE3::from_seven(p.to_seven());
        prop_assert!((q.matrix4() - p.matrix4()).abs().max() < 1e-12);
    }

    #[test]
    fn pyramid_scaling_is_exact(k in intrinsics_strategy(64, 32), level in 0u32..4) {
        let s = k.scaled(level);
        let f = f64::from(1u32 << level);
        prop_assert_eq!(s.fx, k.fx / f);
        prop_assert_eq!(s.fy, k.fy / f);
        prop_assert_eq!(s.cx, k.cx / f);
        prop_assert_eq!(s.cy, k.cy / f);
        prop_assert_eq!(s.width, 64 >> level);
        prop_assert_eq!(s.height, 32 >> level);
        prop_assert!(s.validate().is_ok());
    }

    #[test]
    fn vectorized_reprojection_matches_scalar(
        k in intrinsics_strategy(8, 8),
        p in pose_strategy(),
        depths in prop::collection::vec(0.2..20.0f64, 64),
    ) {
        let depth = DepthMap::new(8, 8, depths).unwrap();
        let grid = reproject(&depth, &k, &p).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let idx = i * 8 + j;
                let [x, y] = grid.coords[idx];
                match brute_force_reproject((i, j), depth.at(i, j), &k, &p) {
                    Some((bx, by)) => {
                        // Rounding grows as the point approaches the source image plane.
                        let d = depth.at(i, j);
                        let ray = nalgebra::Vector3::new((j as f64 - k.cx) / k.fx * d, (i as f64 - k.cy) / k.fy * d, d);
                        let conditioning = (d / p.transform_point(&ray).z).max(1.0);
                        prop_assert!((x - bx).abs() <= 1e-12 * conditioning * bx.abs().max(1.0));
                        prop_assert!((y - by).abs() <= 1e-12 * conditioning * by.abs().max(1.0));
                        let inside = (0.0..=7.0).contains(&bx) && (0.0..=7.0).contains(&by);
                        prop_assert_eq!(grid.in_bounds[idx], inside);
                    }
                    None => prop_assert!(!grid.in_bounds[idx]),
                }
            }
        }
    }

    #[test]
    fn reprojection_commutes_with_pyramid_level(
        k in intrinsics_strategy(32, 32),
        p in (prop::array::uniform3(-0.1..0.1f64), prop::array::uniform3(-0.3..0.3f64)),
        depths in prop::collection::vec(1.0..10.0f64, 32 * 32),
        level in 1u32..4,
    ) {
        let pose = PoseSE3::new(p.0, p.1);
        let depth = DepthMap::new(32, 32, depths).unwrap();
        let fine = reproject(&depth, &k, &pose).unwrap();
        let coarse = reproject(&depth.decimated(level), &k.scaled(level), &pose).unwrap();
        let f = f64::from(1u32 << level);
        let w = 32 >> level;
        for (idx, c) in coarse.coords.iter().enumerate() {
            let (i, j) = (idx / w, idx % w);
            let (fi, fj) = (i << level, j << level);
            let full = fine.coords[fi * 32 + fj];
            let d = depth.at(fi, fj);
            let ray = nalgebra::Vector3::new((fj as f64 - k.cx) / k.fx * d, (fi as f64 - k.cy) / k.fy * d, d);
            let z = pose.transform_point(&ray).z;
            if z <= 0.0 {
                continue;
            }
            let conditioning = (d / z).max(1.0);
            for a in 0..2 {
                let expected = full[a] / f;
                prop_assert!((c[a] - expected).abs() < 1e-12 * conditioning * expected.abs().max(1.0));
            }
        }
    }

    #[test]
    fn valid_depths_are_positive_and_finite(values in prop::collection::vec(prop::num::f64::ANY, 16)) {
        match DepthMap::new(4, 4, values.clone()) {
            Ok(d) => prop_assert!(d.values().iter().all(|v| v.is_finite() && *v > 0.0)),
            Err(_) => prop_assert!(values.iter().any(|v| !(v.is_finite() && *v > 0.0))),
        }
        if let Ok(d) = DepthMap::sparse(4, 4, values) {
            for (v, ok) in d.values().iter().zip(d.valid()) {
                prop_assert_eq!(*ok, v.is_finite() && *v > 0.0);
            }
        }
    }
}

#[test]
fn identity_warp_returns_the_source() {
    let k = Intrinsics::new(20.0, 18.0, 6.5, 4.0, 12, 9).unwrap();
    let image = Tensor::from_fn(vec![3, 9, 12], |i| ((i * 37) % 101) as f64 / 100.0);
    let depth = DepthMap::new(9, 12, (0..108).map(|i| 1.0 + i as f64 * 0.1).collect()).unwrap();
    let (out, valid) = warp(&image, &depth, &k, &PoseSE3::identity()).unwrap();
    assert_eq!(out.data(), image.data());
    assert!(valid.iter().all(|&v| v));
}

#[test]
fn integer_pixel_shift_from_lateral_translation() {
    // A fronto-parallel plane at depth z moved sideways by t shifts pixels by fx·t/z.
    let k = Intrinsics::new(10.0, 10.0, 7.5, 5.5, 16, 12).unwrap();
    let depth = DepthMap::new(12, 16, vec![5.0; 192]).unwrap();
    let pose = PoseSE3::new([0.0; 3], [1.0, 0.0, 0.0]);
    let image = Tensor::from_fn(vec![1, 12, 16], |i| (i % 16) as f64 * 0.1 + (i / 16) as f64);
    let (out, valid) = warp(&image, &depth, &k, &pose).unwrap();
    for i in 0..12 {
        for j in 0..16 {
            let p = i * 16 + j;
            assert_eq!(valid[p], j + 2 <= 15);
            if valid[p] {
                assert!((out.data()[p] - image.data()[p + 2]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn negative_depth_after_transform_is_invalid() {
    let k = Intrinsics::new(10.0, 10.0, 3.5, 3.5, 8, 8).unwrap();
    let depth = DepthMap::new(8, 8, vec![1.0; 64]).unwrap();
    let grid = reproject(&depth, &k, &PoseSE3::new([0.0; 3], [0.0, 0.0, -2.0])).unwrap();
    assert!(grid.in_bounds.iter().all(|&v| !v));
}

#[test]
fn rejects_inconsistent_intrinsics() {
    assert!(Intrinsics::new(-1.0, 1.0, 0.0, 0.0, 4, 4).is_err());
    assert!(Intrinsics::new(1.0, 1.0, 4.0, 0.0, 4, 4).is_err());
    assert!(Intrinsics::new(1.0, 1.0, 0.0, -0.5, 4, 4).is_err());
}
