//! WebAssembly bindings for the browser demo.
//!
//! The page renders a synthetic scene pair, lets the user steer the camera
//! motion used to warp the source view back onto the target, compares the
//! Gaussian kernel with its truncated series, and shows one row of the
//! attention similarity for a clicked pixel.

use depthcue::autograd::Tensor;
use depthcue::camgeom::{warp, DepthMap, PoseSE3};
use depthcue::ham::{gaussian_kernel, taylor_kernel};
use depthcue::synthdata::{render_pair, RenderedPair, SceneGenerator};
use wasm_bindgen::prelude::*;

const SCENE_SIZE: usize = 96;

fn js_err(e: depthcue::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct DemoScene {
    pair: RenderedPair,
}

#[wasm_bindgen]
pub struct Reconstruction {
    rgba: Vec<u8>,
    error_rgba: Vec<u8>,
    mean_error: f64,
    coverage: f64,
}

#[wasm_bindgen]
impl Reconstruction {
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    pub fn error_rgba(&self) -> Vec<u8> {
        self.error_rgba.clone()
    }

    /// Mean absolute photometric error over pixels that land inside the source.
    pub fn mean_error(&self) -> f64 {
        self.mean_error
    }

    /// Fraction of target pixels that reproject inside the source frame.
    pub fn coverage(&self) -> f64 {
        self.coverage
    }
}

#[wasm_bindgen]
impl DemoScene {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> Result<DemoScene, JsError> {
        let generator = SceneGenerator { width: SCENE_SIZE, height: SCENE_SIZE, ..SceneGenerator::default() };
        let pair = render_pair(&generator.scene(u64::from(seed))).map_err(js_err)?;
        Ok(DemoScene { pair })
    }

    pub fn width(&self) -> usize {
        self.pair.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.pair.intrinsics.height
    }

    pub fn target_rgba(&self) -> Vec<u8> {
        image_rgba(&self.pair.target)
    }

    pub fn source_rgba(&self) -> Vec<u8> {
        image_rgba(&self.pair.source)
    }

    /// Inverse depth shaded from near (bright) to far (dark).
    pub fn depth_rgba(&self) -> Vec<u8> {
        let inv: Vec<f64> = self.pair.depth.values().iter().map(|d| 1.0 / d).collect();
        let hi = inv.iter().cloned().fold(f64::MIN, f64::max);
        let lo = inv.iter().cloned().fold(f64::MAX, f64::min);
        let span = (hi - lo).max(1e-12);
        inv.iter().flat_map(|v| heat((v - lo) / span)).collect()
    }

    /// Camera motion that rendered the source: rotation (axis-angle) then translation.
    pub fn true_motion(&self) -> Vec<f64> {
        motion_of(&self.pair.pose).to_vec()
    }

    /// Warps the source onto the target using the rendered depth scaled by
    /// `depth_scale` and the motion `[rx, ry, rz, tx, ty, tz]`.
    pub fn reconstruct(&self, motion: &[f64], depth_scale: f64) -> Result<Reconstruction, JsError> {
        if motion.len() != 6 {
            return Err(JsError::new("motion needs six values"));
        }
        reconstruct(&self.pair, motion, depth_scale).map_err(js_err)
    }

    /// Gaussian similarity between the clicked pixel and every other pixel,
    /// using colour and position as the feature vector.
    pub fn attention(&self, x: usize, y: usize, delta: f64, position_weight: f64) -> Result<Vec<u8>, JsError> {
        let (h, w) = (self.height(), self.width());
        if x >= w || y >= h {
            return Err(JsError::new("query outside the image"));
        }
        if !(delta > 0.0) {
            return Err(JsError::new("bandwidth must be positive"));
        }
        let features = pixel_features(&self.pair.target, position_weight);
        let query = &features[y * w + x];
        Ok(features.iter().flat_map(|f| heat(gaussian_kernel(f, query, delta))).collect())
    }
}

fn reconstruct(pair: &RenderedPair, motion: &[f64], depth_scale: f64) -> depthcue::Result<Reconstruction> {
    let pose = PoseSE3::new([motion[0], motion[1], motion[2]], [motion[3], motion[4], motion[5]]);
    let d = &pair.depth;
    let depth = DepthMap::new(d.height(), d.width(), d.values().iter().map(|v| v * depth_scale).collect())?;
    let (warped, valid) = warp(&pair.source, &depth, &pair.intrinsics, &pose)?;
    let plane = d.height() * d.width();
    let mut errors = vec![0.0; plane];
    let (mut total, mut count) = (0.0, 0usize);
    for (p, err) in errors.iter_mut().enumerate() {
        if !valid[p] {
            continue;
        }
        *err = (0..3).map(|c| (warped.data()[c * plane + p] - pair.target.data()[c * plane + p]).abs()).sum::<f64>() / 3.0;
        total += *err;
        count += 1;
    }
    let error_rgba = errors
        .iter()
        .zip(&valid)
        .flat_map(|(&e, &ok)| if ok { heat((e * 4.0).min(1.0)) } else { [40, 40, 40, 255] })
        .collect();
    Ok(Reconstruction {
        rgba: image_rgba(&warped),
        error_rgba,
        mean_error: if count > 0 { total / count as f64 } else { f64::NAN },
        coverage: count as f64 / plane as f64,
    })
}

fn motion_of(pose: &PoseSE3) -> [f64; 6] {
    let (r, t) = (pose.rotation, pose.translation);
    [r.x, r.y, r.z, t.x, t.y, t.z]
}

fn pixel_features(image: &Tensor, position_weight: f64) -> Vec<Vec<f64>> {
    let (h, w) = (image.dim(1), image.dim(2));
    let plane = h * w;
    (0..plane)
        .map(|p| {
            let mut f: Vec<f64> = (0..3).map(|c| image.data()[c * plane + p]).collect();
            f.push(position_weight * (p % w) as f64 / w as f64);
            f.push(position_weight * (p / w) as f64 / h as f64);
            f
        })
        .collect()
}

/// Samples the Gaussian kernel and its truncated series along one axis.
/// Returns `samples` triples of `(distance, gaussian, series)` flattened.
#[wasm_bindgen]
pub fn kernel_curves(delta: f64, order: usize, max_distance: f64, samples: usize) -> Result<Vec<f64>, JsError> {
    if !(delta > 0.0) || samples < 2 {
        return Err(JsError::new("need a positive bandwidth and at least two samples"));
    }
    Ok(curves(delta, order, max_distance, samples))
}

fn curves(delta: f64, order: usize, max_distance: f64, samples: usize) -> Vec<f64> {
    let anchor = [-0.5 * max_distance];
    (0..samples)
        .flat_map(|k| {
            let d = max_distance * k as f64 / (samples - 1) as f64;
            let point = [anchor[0] + d];
            [d, gaussian_kernel(&anchor, &point, delta), taylor_kernel(&anchor, &point, delta, order)]
        })
        .collect()
}

fn image_rgba(t: &Tensor) -> Vec<u8> {
    let plane = t.dim(1) * t.dim(2);
    let to_byte = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    (0..plane)
        .flat_map(|p| [to_byte(t.data()[p]), to_byte(t.data()[plane + p]), to_byte(t.data()[2 * plane + p]), 255])
        .collect()
}

/// Dark blue to yellow ramp for values in `[0, 1]`.
fn heat(v: f64) -> [u8; 4] {
    let v = v.clamp(0.0, 1.0);
    let r = (255.0 * v.powf(0.8)) as u8;
    let g = (255.0 * v.powf(1.6)) as u8;
    let b = (120.0 * (1.0 - v) + 40.0) as u8;
    [r, g, b, 255]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene() -> RenderedPair {
        let generator = SceneGenerator { width: 32, height: 32, ..SceneGenerator::default() };
        render_pair(&generator.scene(3)).unwrap()
    }

    #[test]
    fn true_motion_beats_identity() {
        let pair = scene();
        let truth = reconstruct(&pair, &motion_of(&pair.pose), 1.0).unwrap();
        let still = reconstruct(&pair, &[0.0; 6], 1.0).unwrap();
        assert!(truth.mean_error < still.mean_error);
        assert_eq!(truth.rgba.len(), 32 * 32 * 4);
    }

    #[test]
    fn series_matches_gaussian_near_anchor() {
        let c = curves(1.0, 12, 1.0, 11);
        for t in c.chunks(3) {
            assert!((t[1] - t[2]).abs() < 1e-6, "{t:?}");
        }
    }

    #[test]
    fn heat_stays_in_range() {
        assert_eq!(heat(-1.0), heat(0.0));
        assert_eq!(heat(2.0)[0], 255);
    }
}
