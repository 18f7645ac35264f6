//! Depth error metrics with median scaling, and short-snippet trajectory error.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camgeom::{DepthMap, PoseSE3};
use crate::error::{invalid, shape_err, Result};

pub const MIN_EVAL_DEPTH: f64 = 1e-3;
pub const KITTI_DEPTH_CAP: f64 = 80.0;

/// Fractional bounds `(top, bottom, left, right)` of the standard KITTI
/// evaluation crop.
pub const EIGEN_CROP: (f64, f64, f64, f64) = (0.40810811, 0.99189189, 0.03594771, 0.96405229);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub num_pixels: usize,
    pub scale_applied: f64,
}

impl MetricsReport {
    /// Pixel-weighted average of several reports.
    pub fn pooled(reports: &[MetricsReport]) -> Option<MetricsReport> {
        let total: usize = reports.iter().map(|r| r.num_pixels).sum();
        if total == 0 {
            return None;
        }
        let avg = |f: fn(&MetricsReport) -> f64| {
            reports.iter().map(|r| f(r) * r.num_pixels as f64).sum::<f64>() / total as f64
        };
        Some(MetricsReport {
            abs_rel: avg(|r| r.abs_rel),
            sq_rel: avg(|r| r.sq_rel),
            rmse: avg(|r| r.rmse),
            rmse_log: avg(|r| r.rmse_log),
            delta1: avg(|r| r.delta1),
            delta2: avg(|r| r.delta2),
            delta3: avg(|r| r.delta3),
            num_pixels: total,
            scale_applied: avg(|r| r.scale_applied),
        })
    }

    /// Mean of per-image reports, as usually tabulated.
    pub fn mean(reports: &[MetricsReport]) -> Option<MetricsReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Some(MetricsReport {
            abs_rel: avg(|r| r.abs_rel),
            sq_rel: avg(|r| r.sq_rel),
            rmse: avg(|r| r.rmse),
            rmse_log: avg(|r| r.rmse_log),
            delta1: avg(|r| r.delta1),
            delta2: avg(|r| r.delta2),
            delta3: avg(|r| r.delta3),
            num_pixels: reports.iter().map(|r| r.num_pixels).sum(),
            scale_applied: avg(|r| r.scale_applied),
        })
    }
}

fn check_pair(pred: &DepthMap, gt: &DepthMap, mask: &[bool]) -> Result<()> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(shape_err(format!(
            "prediction {}x{} against ground truth {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    if mask.len() != gt.values().len() {
        return Err(shape_err(format!("mask of {} for {} pixels", mask.len(), gt.values().len())));
    }
    Ok(())
}

/// Median of a non-empty slice; the mean of the two central values for even
/// lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 0 { 0.5 * (v[mid - 1] + v[mid]) } else { v[mid] })
}

/// Pixels where the mask, the ground truth and the prediction are all valid.
fn joint_mask(pred: &DepthMap, gt: &DepthMap, mask: &[bool]) -> Vec<bool> {
    mask.iter().zip(gt.valid()).zip(pred.valid()).map(|((&m, &g), &p)| m && g && p).collect()
}

/// Multiplies `pred` by the ratio of ground-truth to predicted medians over
/// the jointly valid pixels.
pub fn median_scale(pred: &DepthMap, gt: &DepthMap, mask: &[bool]) -> Result<(DepthMap, f64)> {
    check_pair(pred, gt, mask)?;
    let keep = joint_mask(pred, gt, mask);
    let pick = |d: &DepthMap| -> Vec<f64> {
        d.values().iter().zip(&keep).filter(|(_, &k)| k).map(|(v, _)| *v).collect()
    };
    let gt_med = median(&pick(gt)).ok_or_else(|| invalid("median scaling over an empty mask"))?;
    let pred_med = median(&pick(pred)).expect("same mask is non-empty");
    let scale = gt_med / pred_med;
    let scaled = pred.values().iter().map(|v| v * scale).collect();
    Ok((DepthMap::sparse(pred.height(), pred.width(), scaled)?, scale))
}

/// Standard depth error metrics. Predictions are clamped to
/// `[MIN_EVAL_DEPTH, cap]` and only pixels with ground truth at most `cap`
/// are scored.
pub fn depth_metrics(pred: &DepthMap, gt: &DepthMap, mask: &[bool], cap: f64) -> Result<MetricsReport> {
    check_pair(pred, gt, mask)?;
    if !(cap > 0.0) {
        return Err(invalid(format!("depth cap must be positive, got {cap}")));
    }
    let keep = joint_mask(pred, gt, mask);
    let (mut abs_rel, mut sq_rel, mut sq, mut sq_log) = (0.0, 0.0, 0.0, 0.0);
    let mut within = [0usize; 3];
    let mut n = 0usize;
    for ((&p, &g), &k) in pred.values().iter().zip(gt.values()).zip(&keep) {
        if !k || g > cap {
            continue;
        }
        let p = p.clamp(MIN_EVAL_DEPTH, cap);
        let diff = p - g;
        abs_rel += diff.abs() / g;
        sq_rel += diff * diff / g;
        sq += diff * diff;
        let log_diff = p.ln() - g.ln();
        sq_log += log_diff * log_diff;
        let ratio = (p / g).max(g / p);
        for (k, count) in within.iter_mut().enumerate() {
            if ratio < 1.25f64.powi(k as i32 + 1) {
                *count += 1;
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(invalid("no valid pixels to evaluate"));
    }
    let nf = n as f64;
    Ok(MetricsReport {
        abs_rel: abs_rel / nf,
        sq_rel: sq_rel / nf,
        rmse: (sq / nf).sqrt(),
        rmse_log: (sq_log / nf).sqrt(),
        delta1: within[0] as f64 / nf,
        delta2: within[1] as f64 / nf,
        delta3: within[2] as f64 / nf,
        num_pixels: n,
        scale_applied: 1.0,
    })
}

/// Median scaling followed by [`depth_metrics`].
pub fn evaluate_depth(pred: &DepthMap, gt: &DepthMap, mask: &[bool], cap: f64) -> Result<MetricsReport> {
    let (scaled, scale) = median_scale(pred, gt, mask)?;
    let mut report = depth_metrics(&scaled, gt, mask, cap)?;
    report.scale_applied = scale;
    Ok(report)
}

/// Mask selecting the standard KITTI evaluation crop in an `height×width` map.
pub fn eigen_crop_mask(height: usize, width: usize) -> Vec<bool> {
    let (top, bottom, left, right) = EIGEN_CROP;
    let (r0, r1) = ((top * height as f64) as usize, (bottom * height as f64) as usize);
    let (c0, c1) = ((left * width as f64) as usize, (right * width as f64) as usize);
    (0..height)
        .flat_map(|i| (0..width).map(move |j| (r0..r1).contains(&i) && (c0..c1).contains(&j)))
        .collect()
}

/// Camera positions obtained by chaining frame-to-frame motions from the
/// origin. Each motion is the pose of the next camera in the current frame.
pub fn accumulate_positions(motions: &[PoseSE3]) -> Vec<[f64; 3]> {
    let mut current = PoseSE3::identity();
    let mut out = vec![[0.0; 3]];
    for m in motions {
        current = current.compose(m);
        let t = current.translation;
        out.push([t.x, t.y, t.z]);
    }
    out
}

/// Root-mean-square position error of one snippet after optimal scaling of
/// the predicted trajectory.
pub fn snippet_ate(pred: &[PoseSE3], gt: &[PoseSE3]) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(shape_err(format!("snippet lengths {} and {}", pred.len(), gt.len())));
    }
    let p = accumulate_positions(pred);
    let g = accumulate_positions(gt);
    let dot = |a: &[f64; 3], b: &[f64; 3]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let num: f64 = p.iter().zip(&g).map(|(a, b)| dot(a, b)).sum();
    let den: f64 = p.iter().map(|a| dot(a, a)).sum();
    let scale = if den > 0.0 { num / den } else { 1.0 };
    let sq: f64 = p
        .iter()
        .zip(&g)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (scale * x - y).powi(2)).sum::<f64>())
        .sum();
    Ok((sq / p.len() as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AteSummary {
    pub mean: f64,
    pub std: f64,
    pub snippets: usize,
}

/// Mean and population standard deviation of [`snippet_ate`] over
/// snippets of four frame-to-frame motions.
pub fn ate_5frame(pred: &[[PoseSE3; 4]], gt: &[[PoseSE3; 4]]) -> Result<AteSummary> {
    if pred.len() != gt.len() {
        return Err(shape_err(format!("{} predicted snippets against {} ground truth", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(invalid("no snippets to evaluate"));
    }
    let errs = pred.iter().zip(gt).map(|(p, g)| snippet_ate(p, g)).collect::<Result<Vec<_>>>()?;
    let n = errs.len() as f64;
    let mean = errs.iter().sum::<f64>() / n;
    let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
    Ok(AteSummary { mean, std: var.sqrt(), snippets: errs.len() })
}

/// Angle in degrees between two translation directions; 90 when either is zero.
pub fn translation_angle_deg(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        return 90.0;
    }
    (a.dot(b) / denom).clamp(-1.0, 1.0).acos().to_degrees()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(values: &[f64]) -> DepthMap {
        DepthMap::sparse(1, values.len(), values.to_vec()).unwrap()
    }

    #[test]
    fn pred_twice_gt_row() {
        let gt = map(&[1.0; 6]);
        let pred = map(&[2.0; 6]);
        let r = depth_metrics(&pred, &gt, &[true; 6], KITTI_DEPTH_CAP).unwrap();
        assert_eq!((r.abs_rel, r.sq_rel, r.rmse), (1.0, 1.0, 1.0));
        assert_eq!(r.rmse_log, 2f64.ln());
        assert_eq!((r.delta1, r.delta2, r.delta3), (0.0, 0.0, 0.0));
    }

    #[test]
    fn median_of_even_count_averages_middle() {
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn empty_mask_is_rejected() {
        let gt = map(&[1.0, 2.0]);
        assert!(median_scale(&gt, &gt, &[false, false]).is_err());
        assert!(depth_metrics(&gt, &gt, &[false, false], 80.0).is_err());
    }

    #[test]
    fn crop_keeps_lower_centre() {
        let m = eigen_crop_mask(100, 100);
        assert!(!m[0]);
        assert!(m[60 * 100 + 50]);
        assert!(!m[60 * 100 + 1]);
    }
}
