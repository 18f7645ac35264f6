use depthcue::camgeom::{DepthMap, PoseSE3};
use depthcue::evalmetrics::{
    accumulate_positions, ate_5frame, depth_metrics, eigen_crop_mask, evaluate_depth, snippet_ate,
    translation_angle_deg, KITTI_DEPTH_CAP,
};
use nalgebra::Vector3;
use proptest::prelude::*;

fn row(values: Vec<f64>) -> DepthMap {
    DepthMap::sparse(1, values.len(), values).unwrap()
}

fn step(x: f64, y: f64, z: f64) -> PoseSE3 {
    PoseSE3::new([0.0; 3], [x, y, z])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn delta_thresholds_are_symmetric(pairs in prop::collection::vec((0.5..50.0f64, 0.5..50.0f64), 1..40)) {
        let (p, g): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let mask = vec![true; p.len()];
        let a = depth_metrics(&row(p.clone()), &row(g.clone()), &mask, f64::INFINITY).unwrap();
        let b = depth_metrics(&row(g), &row(p), &mask, f64::INFINITY).unwrap();
        prop_assert_eq!(a.delta1, b.delta1);
        prop_assert_eq!(a.delta2, b.delta2);
        prop_assert_eq!(a.delta3, b.delta3);
        prop_assert!((a.rmse - b.rmse).abs() < 1e-9);
        prop_assert!((a.rmse_log - b.rmse_log).abs() < 1e-9);
    }

    #[test]
    fn infinite_cap_leaves_values_alone(pairs in prop::collection::vec((0.01..500.0f64, 0.01..500.0f64), 1..40)) {
        let (p, g): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let mask = vec![true; p.len()];
        let r = depth_metrics(&row(p.clone()), &row(g.clone()), &mask, f64::INFINITY).unwrap();
        let abs_rel = p.iter().zip(&g).map(|(p, g)| (p - g).abs() / g).sum::<f64>() / p.len() as f64;
        prop_assert!((r.abs_rel - abs_rel).abs() <= 1e-12 * abs_rel.max(1.0));
        prop_assert_eq!(r.num_pixels, p.len());
    }

    #[test]
    fn delta_fractions_are_nested(pairs in prop::collection::vec((0.5..80.0f64, 0.5..80.0f64), 1..40)) {
        let (p, g): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let r = evaluate_depth(&row(p.clone()), &row(g), &vec![true; p.len()], KITTI_DEPTH_CAP).unwrap();
        prop_assert!(r.delta1 <= r.delta2 && r.delta2 <= r.delta3 && r.delta3 <= 1.0);
        prop_assert!(r.abs_rel >= 0.0 && r.rmse_log >= 0.0);
    }
}

#[test]
fn abs_rel_is_asymmetric() {
    let mask = [true];
    let over = depth_metrics(&row(vec![2.0]), &row(vec![1.0]), &mask, f64::INFINITY).unwrap();
    let under = depth_metrics(&row(vec![1.0]), &row(vec![2.0]), &mask, f64::INFINITY).unwrap();
    assert_eq!(over.abs_rel, 1.0);
    assert_eq!(under.abs_rel, 0.5);
    assert_eq!(over.sq_rel, 1.0);
    assert_eq!(under.sq_rel, 0.5);
    assert_eq!(over.delta1, under.delta1);
}

#[test]
fn cap_drops_far_ground_truth_and_clamps_predictions() {
    let mask = [true, true, true];
    let r = depth_metrics(&row(vec![200.0, 10.0, 5.0]), &row(vec![50.0, 100.0, 5.0]), &mask, 80.0).unwrap();
    assert_eq!(r.num_pixels, 2);
    assert!((r.abs_rel - 0.3).abs() < 1e-15);
}

#[test]
fn masks_and_invalid_pixels_are_skipped() {
    let pred = row(vec![1.0, 2.0, 3.0, 4.0]);
    let gt = row(vec![1.0, 0.0, 6.0, 4.0]);
    let r = depth_metrics(&pred, &gt, &[true, true, false, true], f64::INFINITY).unwrap();
    assert_eq!(r.num_pixels, 2);
    assert_eq!(r.abs_rel, 0.0);
    assert!(depth_metrics(&pred, &gt, &[false; 4], f64::INFINITY).is_err());
    assert!(depth_metrics(&pred, &gt, &[true; 3], f64::INFINITY).is_err());
}

#[test]
fn median_scaling_recovers_a_global_scale() {
    let gt = row(vec![2.0, 4.0, 8.0, 16.0, 3.0]);
    let pred = row(gt.values().iter().map(|v| v * 0.25).collect());
    let r = evaluate_depth(&pred, &gt, &[true; 5], f64::INFINITY).unwrap();
    assert_eq!(r.scale_applied, 4.0);
    assert_eq!(r.abs_rel, 0.0);
    assert_eq!(r.delta1, 1.0);
}

#[test]
fn crop_mask_keeps_the_central_band() {
    let mask = eigen_crop_mask(100, 200);
    let kept = mask.iter().filter(|&&m| m).count();
    assert_eq!(kept, (99 - 40) * (192 - 7));
    assert!(!mask[0] && mask[60 * 200 + 100]);
}

#[test]
fn positions_chain_from_the_origin() {
    let pos = accumulate_positions(&[step(1.0, 0.0, 0.0), step(0.0, 2.0, 0.0)]);
    assert_eq!(pos, vec![[0.0; 3], [1.0, 0.0, 0.0], [1.0, 2.0, 0.0]]);
    let turn = PoseSE3::new([0.0, std::f64::consts::FRAC_PI_2, 0.0], [0.0, 0.0, 1.0]);
    let pos = accumulate_positions(&[turn, step(0.0, 0.0, 1.0)]);
    assert!((pos[2][0] - 1.0).abs() < 1e-12 && (pos[2][2] - 1.0).abs() < 1e-12);
}

#[test]
fn ate_ignores_trajectory_scale() {
    let gt = [step(0.0, 0.0, 1.0), step(0.1, 0.0, 1.0), step(0.0, 0.0, 1.2), step(-0.1, 0.0, 0.9)];
    let half = gt.map(|p| PoseSE3::new([0.0; 3], [p.translation.x * 0.5, p.translation.y * 0.5, p.translation.z * 0.5]));
    assert!(snippet_ate(&half, &gt).unwrap() < 1e-12);
    let summary = ate_5frame(&[half, gt], &[gt, gt]).unwrap();
    assert!(summary.mean < 1e-12 && summary.std < 1e-12);
    assert_eq!(summary.snippets, 2);
}

#[test]
fn ate_of_a_hand_computed_snippet() {
    // Prediction stands still; the optimal scale is then undefined and left at 1.
    let still = [PoseSE3::identity(); 4];
    let gt = [step(1.0, 0.0, 0.0); 4];
    let expected = ((1.0 + 4.0 + 9.0 + 16.0) / 5.0f64).sqrt();
    assert!((snippet_ate(&still, &gt).unwrap() - expected).abs() < 1e-12);
    assert!(snippet_ate(&still[..3], &gt).is_err());
    assert!(ate_5frame(&[], &[]).is_err());
}

#[test]
fn translation_angles() {
    let x = Vector3::new(1.0, 0.0, 0.0);
    assert_eq!(translation_angle_deg(&x, &(x * 3.0)), 0.0);
    assert!((translation_angle_deg(&x, &Vector3::new(0.0, 0.0, 2.0)) - 90.0).abs() < 1e-12);
    assert!((translation_angle_deg(&x, &-x) - 180.0).abs() < 1e-12);
    assert_eq!(translation_angle_deg(&x, &Vector3::zeros()), 90.0);
}
