//! View-reconstruction losses: SSIM, photometric error, per-pixel minimum
//! reprojection with auto-masking, edge-aware smoothness and the multi-scale
//! total.
//!
//! Every loss is written once against the autograd [`Graph`] on `N×C×H×W`
//! tensors. The plain functions at the bottom wrap single `C×H×W` images.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor, Var};
use crate::camgeom::{warp_graph, DepthRange, PoseSE3, PoseVars};
use crate::error::{invalid, shape_err, Result};
use crate::kittidata::FrameSample;

/// Added to a source's error wherever its warp left the frame, so the
/// per-pixel minimum prefers any valid source.
const INVALID_PENALTY: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub num_scales: usize,
    pub ssim_c1: f64,
    pub ssim_c2: f64,
    pub ssim_window: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.85,
            gamma: 0.001,
            num_scales: 4,
            ssim_c1: 0.01 * 0.01,
            ssim_c2: 0.03 * 0.03,
            ssim_window: 3,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(invalid(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.gamma >= 0.0) {
            return Err(invalid(format!("gamma must be non-negative, got {}", self.gamma)));
        }
        if self.num_scales == 0 {
            return Err(invalid("num_scales must be at least 1"));
        }
        if self.ssim_window % 2 == 0 {
            return Err(invalid("ssim_window must be odd"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub per_scale_photometric: Vec<f64>,
    pub per_scale_smoothness: Vec<f64>,
    /// Fraction of pixels kept by the auto-mask, averaged over scales.
    pub mask_fraction: f64,
}

impl LossBreakdown {
    /// Recomputes the total from the recorded parts.
    pub fn recombined(&self, gamma: f64) -> f64 {
        let n = self.per_scale_photometric.len() as f64;
        self.per_scale_photometric
            .iter()
            .zip(&self.per_scale_smoothness)
            .map(|(p, s)| p + gamma * s)
            .sum::<f64>()
            / n
    }
}

/// Per-pixel `(1 − SSIM)/2`, averaged over channels: `N×C×H×W` → `N×1×H×W`.
pub fn ssim_graph(g: &mut Graph, a: Var, b: Var, cfg: &LossConfig) -> Var {
    let pad = cfg.ssim_window / 2;
    let k = cfg.ssim_window;
    let pool = |g: &mut Graph, x: Var| {
        let p = g.reflect_pad(x, pad);
        g.avg_pool(p, k)
    };
    let mu_a = pool(g, a);
    let mu_b = pool(g, b);
    let aa = g.square(a);
    let bb = g.square(b);
    let ab = g.mul(a, b);
    let e_aa = pool(g, aa);
    let e_bb = pool(g, bb);
    let e_ab = pool(g, ab);

    let mu_a2 = g.square(mu_a);
    let mu_b2 = g.square(mu_b);
    let mu_ab = g.mul(mu_a, mu_b);
    let var_a = g.sub(e_aa, mu_a2);
    let var_b = g.sub(e_bb, mu_b2);
    let cov = g.sub(e_ab, mu_ab);

    let n1 = g.mul_scalar(mu_ab, 2.0);
    let n1 = g.add_scalar(n1, cfg.ssim_c1);
    let n2 = g.mul_scalar(cov, 2.0);
    let n2 = g.add_scalar(n2, cfg.ssim_c2);
    let num = g.mul(n1, n2);
    let d1 = g.add(mu_a2, mu_b2);
    let d1 = g.add_scalar(d1, cfg.ssim_c1);
    let d2 = g.add(var_a, var_b);
    let d2 = g.add_scalar(d2, cfg.ssim_c2);
    let den = g.mul(d1, d2);
    let ssim = g.div(num, den);

    let one_minus = g.mul_scalar(ssim, -0.5);
    let one_minus = g.add_scalar(one_minus, 0.5);
    let clamped = g.clamp(one_minus, 0.0, 1.0);
    g.mean_axes(clamped, &[1])
}

/// `α·ssim + (1−α)·mean_c |a − b|`, shape `N×1×H×W`.
pub fn photometric_graph(g: &mut Graph, a: Var, b: Var, cfg: &LossConfig) -> Var {
    let diff = g.sub(a, b);
    let l1 = g.abs(diff);
    let l1 = g.mean_axes(l1, &[1]);
    let l1 = g.mul_scalar(l1, 1.0 - cfg.alpha);
    if cfg.alpha == 0.0 {
        return l1;
    }
    let s = ssim_graph(g, a, b, cfg);
    let s = g.mul_scalar(s, cfg.alpha);
    g.add(s, l1)
}

/// Element-wise minimum over a list of same-shape maps.
pub fn min_graph(g: &mut Graph, maps: &[Var]) -> Var {
    let mut acc = maps[0];
    for &m in &maps[1..] {
        acc = g.minimum(acc, m);
    }
    acc
}

/// Mean-normalized edge-aware smoothness of `disp` (`N×1×h×w`) against
/// `image` (`N×C×h×w`). Returns a single-element node.
pub fn smoothness_graph(g: &mut Graph, disp: Var, image: Var) -> Var {
    let (_, _, h, w) = g.value(disp).dims4();
    let mean = g.mean_axes(disp, &[2, 3]);
    let norm = g.div(disp, mean);
    let mut terms = Vec::new();
    for (axis, len) in [(3usize, w), (2usize, h)] {
        if len < 2 {
            continue;
        }
        let d_hi = g.narrow(norm, axis, 1, len - 1);
        let d_lo = g.narrow(norm, axis, 0, len - 1);
        let dd = g.sub(d_hi, d_lo);
        let dd = g.abs(dd);
        let i_hi = g.narrow(image, axis, 1, len - 1);
        let i_lo = g.narrow(image, axis, 0, len - 1);
        let di = g.sub(i_hi, i_lo);
        let di = g.abs(di);
        let di = g.mean_axes(di, &[1]);
        let weight = g.mul_scalar(di, -1.0);
        let weight = g.exp(weight);
        let weighted = g.mul(dd, weight);
        terms.push(g.mean_all(weighted));
    }
    match terms.as_slice() {
        [] => g.constant(Tensor::new(vec![1], vec![0.0])),
        [t] => *t,
        [a, b] => g.add(*a, *b),
        _ => unreachable!(),
    }
}

/// Graph inputs of the total loss. `poses[k]` maps target-camera points into
/// the camera of `sources[k]`; `intrinsics` holds one full-resolution entry
/// per batch item.
pub struct LossInputs<'a> {
    pub target: Var,
    pub sources: &'a [Var],
    pub poses: &'a [PoseVars],
    pub intrinsics: &'a [crate::camgeom::Intrinsics],
}

/// Multi-scale loss over per-scale disparities (`N×1×H/2^s×W/2^s`).
pub fn total_loss_graph(
    g: &mut Graph,
    disparities: &[Var],
    inputs: &LossInputs<'_>,
    range: DepthRange,
    cfg: &LossConfig,
) -> Result<(Var, LossBreakdown)> {
    if disparities.len() != cfg.num_scales {
        return Err(shape_err(format!(
            "{} disparity scales for num_scales = {}",
            disparities.len(),
            cfg.num_scales
        )));
    }
    if inputs.sources.is_empty() || inputs.sources.len() != inputs.poses.len() {
        return Err(invalid(format!(
            "{} sources with {} poses",
            inputs.sources.len(),
            inputs.poses.len()
        )));
    }
    let (n, _, h, w) = g.value(inputs.target).dims4();
    if inputs.intrinsics.len() != n {
        return Err(shape_err(format!("{} intrinsics for batch of {n}", inputs.intrinsics.len())));
    }

    let identity_errors: Vec<Var> = inputs
        .sources
        .iter()
        .map(|&s| photometric_graph(g, inputs.target, s, cfg))
        .collect();
    let identity_min = min_graph(g, &identity_errors);
    let identity_min = g.value(identity_min).clone();

    let mut image = inputs.target;
    let mut photo_terms = Vec::new();
    let mut breakdown = LossBreakdown::default();
    let mut mask_total = 0.0;

    for (scale, &disp) in disparities.iter().enumerate() {
        let (dn, dc, dh, dw) = g.value(disp).dims4();
        if dn != n || dc != 1 || dh != h >> scale || dw != w >> scale {
            return Err(shape_err(format!(
                "disparity at scale {scale} has shape {:?}",
                g.shape(disp)
            )));
        }
        if scale > 0 {
            image = g.resize_bilinear(image, dh, dw);
        }
        let smooth = smoothness_graph(g, disp, image);

        let full = if scale == 0 { disp } else { g.resize_bilinear(disp, h, w) };
        let depth = range.depth_graph(g, full);

        let mut errors = Vec::with_capacity(inputs.sources.len());
        let mut any_valid = vec![false; n * h * w];
        for (&src, &pose) in inputs.sources.iter().zip(inputs.poses) {
            let (warped, valid) = warp_graph(g, src, depth, pose, inputs.intrinsics);
            let err = photometric_graph(g, inputs.target, warped, cfg);
            let penalty = Tensor::new(
                vec![n, 1, h, w],
                valid.iter().map(|&v| if v { 0.0 } else { INVALID_PENALTY }).collect(),
            );
            let penalty = g.constant(penalty);
            errors.push(g.add(err, penalty));
            for (a, v) in any_valid.iter_mut().zip(&valid) {
                *a |= *v;
            }
        }
        let reproj = min_graph(g, &errors);

        let reproj_vals = g.value(reproj).data();
        let mu: Vec<bool> = reproj_vals
            .iter()
            .zip(identity_min.data())
            .map(|(r, i)| r < i)
            .collect();
        let count = any_valid.iter().filter(|&&v| v).count().max(1) as f64;
        let kept = mu.iter().filter(|&&m| m).count();
        mask_total += kept as f64 / mu.len() as f64;
        let weights = Tensor::new(
            vec![n, 1, h, w],
            mu.iter()
                .zip(&any_valid)
                .map(|(&m, &v)| if m && v { 1.0 / count } else { 0.0 })
                .collect(),
        );
        let weights = g.constant(weights);
        let masked = g.mul(reproj, weights);
        let photo = g.sum_all(masked);

        breakdown.per_scale_photometric.push(g.value(photo).item());
        breakdown.per_scale_smoothness.push(g.value(smooth).item());
        let weighted_smooth = g.mul_scalar(smooth, cfg.gamma);
        photo_terms.push(g.add(photo, weighted_smooth));
    }

    let stacked = g.concat(&photo_terms, 0);
    let total = g.mean_all(stacked);
    breakdown.total = g.value(total).item();
    breakdown.mask_fraction = mask_total / disparities.len() as f64;
    Ok((total, breakdown))
}

fn check_image(t: &Tensor, what: &str) -> Result<()> {
    if t.rank() != 3 {
        return Err(shape_err(format!("{what} must be C×H×W, got {:?}", t.shape())));
    }
    Ok(())
}

fn check_same(a: &Tensor, b: &Tensor) -> Result<()> {
    check_image(a, "image")?;
    if a.shape() != b.shape() {
        return Err(shape_err(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn batched(t: &Tensor) -> Tensor {
    let mut shape = vec![1];
    shape.extend_from_slice(t.shape());
    t.clone().reshape(shape)
}

fn eval_map(a: &Tensor, b: &Tensor, f: impl Fn(&mut Graph, Var, Var) -> Var) -> Tensor {
    let mut g = Graph::new();
    let av = g.constant(batched(a));
    let bv = g.constant(batched(b));
    let out = f(&mut g, av, bv);
    g.value(out).clone().reshape(vec![a.dim(1), a.dim(2)])
}

/// `(1 − SSIM)/2` per pixel for two `C×H×W` images; returns `H×W`.
pub fn ssim_loss(a: &Tensor, b: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    check_same(a, b)?;
    Ok(eval_map(a, b, |g, x, y| ssim_graph(g, x, y, cfg)))
}

pub fn photometric_error(target: &Tensor, warped: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    check_same(target, warped)?;
    Ok(eval_map(target, warped, |g, x, y| photometric_graph(g, x, y, cfg)))
}

pub fn min_reprojection(errors: &[Tensor]) -> Result<Tensor> {
    let (first, rest) = errors.split_first().ok_or_else(|| invalid("no error maps given"))?;
    let mut out = first.clone();
    for m in rest {
        if m.shape() != first.shape() {
            return Err(shape_err(format!("{:?} vs {:?}", m.shape(), first.shape())));
        }
        out = out.zip_map(m, f64::min);
    }
    Ok(out)
}

/// Per-pixel mask that keeps pixels where the best warped source beats the
/// best unwarped source. Row-major `H×W`.
pub fn auto_mask(target: &Tensor, sources: &[Tensor], warped: &[Tensor], cfg: &LossConfig) -> Result<Vec<bool>> {
    if sources.is_empty() || warped.is_empty() {
        return Err(invalid("auto_mask needs at least one source"));
    }
    let ident = sources
        .iter()
        .map(|s| photometric_error(target, s, cfg))
        .collect::<Result<Vec<_>>>()?;
    let warp = warped
        .iter()
        .map(|s| photometric_error(target, s, cfg))
        .collect::<Result<Vec<_>>>()?;
    let ident = min_reprojection(&ident)?;
    let warp = min_reprojection(&warp)?;
    Ok(warp.data().iter().zip(ident.data()).map(|(w, i)| w < i).collect())
}

/// Edge-aware smoothness of an `H×W` disparity against a `C×H×W` image.
pub fn smoothness_loss(disp: &Tensor, image: &Tensor) -> Result<f64> {
    check_image(image, "image")?;
    let (h, w) = (image.dim(1), image.dim(2));
    if disp.numel() != h * w {
        return Err(shape_err(format!("disparity {:?} for image {:?}", disp.shape(), image.shape())));
    }
    if !(disp.mean() > 0.0) {
        return Err(invalid("disparity mean must be positive"));
    }
    let mut g = Graph::new();
    let d = g.constant(disp.clone().reshape(vec![1, 1, h, w]));
    let i = g.constant(batched(image));
    let s = smoothness_graph(&mut g, d, i);
    Ok(g.value(s).item())
}

/// Multi-scale loss for one sample. `disparities[s]` is `H/2^s × W/2^s`;
/// `poses[k]` belongs to `sample.sources[k]`.
pub fn total_loss(
    disparities: &[Tensor],
    sample: &FrameSample,
    poses: &[PoseSE3],
    range: DepthRange,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    if poses.len() != sample.sources.len() {
        return Err(invalid(format!("{} poses for {} sources", poses.len(), sample.sources.len())));
    }
    let mut g = Graph::new();
    let target = g.constant(batched(&sample.target));
    let sources: Vec<Var> = sample.sources.iter().map(|(_, s)| g.constant(batched(s))).collect();
    let pose_vars: Vec<PoseVars> = poses.iter().map(|p| PoseVars::constant(&mut g, &[*p])).collect();
    let disps: Vec<Var> = disparities
        .iter()
        .map(|d| {
            let n = d.numel();
            let (h, w) = if d.rank() >= 2 { (d.dim(d.rank() - 2), d.dim(d.rank() - 1)) } else { (1, n) };
            g.constant(d.clone().reshape(vec![1, 1, h, w]))
        })
        .collect();
    let inputs = LossInputs {
        target,
        sources: &sources,
        poses: &pose_vars,
        intrinsics: &sample.intrinsics[..1],
    };
    let (_, breakdown) = total_loss_graph(&mut g, &disps, &inputs, range, cfg)?;
    Ok(breakdown)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_image(v: f64) -> Tensor {
        Tensor::full(vec![3, 6, 6], v)
    }

    #[test]
    fn ssim_of_black_against_white_matches_closed_form() {
        let cfg = LossConfig::default();
        let map = ssim_loss(&constant_image(0.0), &constant_image(1.0), &cfg).unwrap();
        let expected = 0.5 / (1.0 + cfg.ssim_c1);
        assert!(map.data().iter().all(|v| (v - expected).abs() < 1e-15));
    }

    #[test]
    fn photometric_error_on_constant_offset() {
        let cfg = LossConfig::default();
        let map = photometric_error(&constant_image(0.4), &constant_image(0.5), &cfg).unwrap();
        let (a, b, c1) = (0.4_f64, 0.5_f64, cfg.ssim_c1);
        let ssim = (2.0 * a * b + c1) / (a * a + b * b + c1);
        let expected = 0.85 * (1.0 - ssim) / 2.0 + 0.15 * 0.1;
        assert!(map.data().iter().all(|v| (v - expected).abs() < 1e-12));
    }

    #[test]
    fn elementwise_minimum_by_inspection() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 3.0, 2.0, 0.0]);
        let b = Tensor::new(vec![2, 2], vec![2.0, 1.0, 1.0, 5.0]);
        assert_eq!(min_reprojection(&[a, b]).unwrap().data(), &[1.0, 1.0, 1.0, 0.0]);
        assert!(min_reprojection(&[]).is_err());
    }

    #[test]
    fn ramp_disparity_smoothness_is_normalized_slope() {
        let disp = Tensor::from_fn(vec![4, 4], |k| (k % 4 + 1) as f64);
        let s = smoothness_loss(&disp, &Tensor::full(vec![3, 4, 4], 0.3)).unwrap();
        assert!((s - 1.0 / 2.5).abs() < 1e-15);
    }

    #[test]
    fn single_flipped_pixel_only_affects_touching_windows() {
        let a = Tensor::from_fn(vec![1, 8, 8], |k| 0.2 + 0.05 * ((k * 7) % 5) as f64);
        let mut b = a.clone();
        b.data_mut()[3 * 8 + 4] = 0.95;
        let map = ssim_loss(&a, &b, &LossConfig::default()).unwrap();
        for i in 0..8usize {
            for j in 0..8usize {
                let near = i.abs_diff(3) <= 1 && j.abs_diff(4) <= 1;
                assert_eq!(map.data()[i * 8 + j] != 0.0, near, "pixel {i},{j}");
            }
        }
    }
}
