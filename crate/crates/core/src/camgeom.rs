//! Pinhole camera geometry and inverse warping.
//!
//! Images are `C×H×W` tensors with pixel `(i, j)` at continuous coordinate
//! `(x = j, y = i)`. A pose maps points from the target camera frame into the
//! source camera frame: `X_s = R·X_t + t`.

use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::autograd::{self, Graph, Tensor, Var};
use crate::error::{invalid, shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(invalid(format!("focal lengths must be positive, got {} {}", self.fx, self.fy)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(invalid("image size must be nonzero"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(invalid(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Intrinsics of pyramid level `level`, every field divided by `2^level`.
    pub fn scaled(&self, level: u32) -> Self {
        let f = (1u64 << level) as f64;
        Self {
            fx: self.fx / f,
            fy: self.fy / f,
            cx: self.cx / f,
            cy: self.cy / f,
            width: self.width >> level,
            height: self.height >> level,
        }
    }

    /// Proportional rescale to a new image size.
    pub fn resized(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.fx, self.fy, self.cx, self.cy]
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

/// Rigid transform stored as axis-angle rotation plus translation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSE3 {
    pub rotation: Vector3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for PoseSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl PoseSE3 {
    pub fn new(rotation: [f64; 3], translation: [f64; 3]) -> Self {
        Self {
            rotation: Vector3::from(rotation),
            translation: Vector3::from(translation),
        }
    }

    pub fn identity() -> Self {
        Self::new([0.0; 3], [0.0; 3])
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        axisangle_to_matrix(self.rotation.into())
    }

    pub fn matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_parts(rotation: &Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let rot = Rotation3::from_matrix_unchecked(*rotation);
        Self {
            rotation: rot.scaled_axis(),
            translation,
        }
    }

    pub fn from_matrix4(m: &Matrix4<f64>) -> Self {
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into();
        Self::from_parts(&r, m.fixed_view::<3, 1>(0, 3).into())
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &PoseSE3) -> PoseSE3 {
        let ra = self.rotation_matrix();
        let rb = other.rotation_matrix();
        Self::from_parts(&(ra * rb), ra * other.translation + self.translation)
    }

    pub fn inverse(&self) -> PoseSE3 {
        let rt = self.rotation_matrix().transpose();
        Self::from_parts(&rt, -(rt * self.translation))
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * p + self.translation
    }

    /// Translation followed by the unit quaternion `(qx, qy, qz, qw)`.
    pub fn to_seven(&self) -> [f64; 7] {
        let q = UnitQuaternion::from_scaled_axis(self.rotation);
        let t = self.translation;
        [t.x, t.y, t.z, q.i, q.j, q.k, q.w]
    }

    pub fn from_seven(v: [f64; 7]) -> Self {
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(v[6], v[3], v[4], v[5]));
        Self {
            rotation: q.scaled_axis(),
            translation: Vector3::new(v[0], v[1], v[2]),
        }
    }
}

pub fn axisangle_to_matrix(rotation: [f64; 3]) -> Matrix3<f64> {
    let r = autograd::rodrigues(rotation);
    Matrix3::from_fn(|i, j| r[i][j])
}

pub fn pose_compose(a: &PoseSE3, b: &PoseSE3) -> PoseSE3 {
    a.compose(b)
}

pub fn pose_invert(p: &PoseSE3) -> PoseSE3 {
    p.inverse()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    /// Dense depth map; every value must be finite and positive.
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(shape_err(format!("{} depth values for {height}x{width}", values.len())));
        }
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(invalid(format!("depth must be positive and finite, found {bad}")));
        }
        Ok(Self {
            height,
            width,
            valid: vec![true; values.len()],
            values,
        })
    }

    /// Sparse depth map where non-positive or non-finite entries are invalid.
    pub fn sparse(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(shape_err(format!("{} depth values for {height}x{width}", values.len())));
        }
        let valid = values.iter().map(|v| v.is_finite() && *v > 0.0).collect();
        Ok(Self { height, width, values, valid })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.width + j]
    }

    pub fn is_dense(&self) -> bool {
        self.valid.iter().all(|&v| v)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![1, 1, self.height, self.width], self.values.clone())
    }

    /// Keeps every `2^level`-th row and column.
    pub fn decimated(&self, level: u32) -> DepthMap {
        let step = 1usize << level;
        let (h, w) = (self.height.div_ceil(step), self.width.div_ceil(step));
        let mut values = Vec::with_capacity(h * w);
        let mut valid = Vec::with_capacity(h * w);
        for i in 0..h {
            for j in 0..w {
                let k = i * step * self.width + j * step;
                values.push(self.values[k]);
                valid.push(self.valid[k]);
            }
        }
        DepthMap { height: h, width: w, values, valid }
    }
}

/// Bounds of the reciprocal map from bounded disparity to depth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthRange {
    pub min_depth: f64,
    pub max_depth: f64,
}

impl Default for DepthRange {
    fn default() -> Self {
        Self { min_depth: 0.1, max_depth: 100.0 }
    }
}

impl DepthRange {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_depth > 0.0 && self.min_depth < self.max_depth) {
            return Err(invalid(format!("bad depth range {} .. {}", self.min_depth, self.max_depth)));
        }
        Ok(())
    }

    /// Returns the `(a, b)` of `depth = 1 / (a·disp + b)`.
    pub fn coefficients(&self) -> (f64, f64) {
        let b = 1.0 / self.max_depth;
        (1.0 / self.min_depth - b, b)
    }

    pub fn depth_of(&self, disp: f64) -> f64 {
        let (a, b) = self.coefficients();
        1.0 / (a * disp + b)
    }

    pub fn depth_graph(&self, g: &mut Graph, disp: Var) -> Var {
        let (a, b) = self.coefficients();
        let scaled = g.mul_scalar(disp, a);
        let denom = g.add_scalar(scaled, b);
        let one = g.scalar(1.0);
        g.div(one, denom)
    }
}

/// Source-image sampling coordinates for every target pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleGrid {
    pub height: usize,
    pub width: usize,
    /// `(x, y)` per target pixel, row-major.
    pub coords: Vec<[f64; 2]>,
    pub in_bounds: Vec<bool>,
}

impl SampleGrid {
    pub fn identity(height: usize, width: usize) -> Self {
        let coords = (0..height * width).map(|p| [(p % width) as f64, (p / width) as f64]).collect();
        Self {
            height,
            width,
            coords,
            in_bounds: vec![true; height * width],
        }
    }

    fn to_tensor(&self) -> Tensor {
        let data = self.coords.iter().flatten().copied().collect();
        Tensor::new(vec![1, self.height, self.width, 2], data)
    }
}

pub(crate) fn within_frame(x: f64, y: f64, width: usize, height: usize) -> bool {
    x >= 0.0 && x <= (width - 1) as f64 && y >= 0.0 && y <= (height - 1) as f64
}

/// Combines camera-side validity with the frame bounds check on a grid value.
pub(crate) fn grid_validity(grid: &Tensor, cam_valid: &[bool], width: usize, height: usize) -> Vec<bool> {
    grid.data()
        .chunks_exact(2)
        .zip(cam_valid)
        .map(|(c, &ok)| ok && within_frame(c[0], c[1], width, height))
        .collect()
}

pub fn reproject(depth: &DepthMap, k: &Intrinsics, pose: &PoseSE3) -> Result<SampleGrid> {
    if !depth.is_dense() {
        return Err(invalid("reprojection requires a dense positive depth map"));
    }
    if depth.width != k.width || depth.height != k.height {
        return Err(shape_err(format!(
            "depth {}x{} does not match intrinsics {}x{}",
            depth.height, depth.width, k.height, k.width
        )));
    }
    let mut g = Graph::new();
    let d = g.constant(depth.to_tensor());
    let r = g.constant(Tensor::new(vec![1, 3, 3], pose.rotation_matrix().transpose().as_slice().to_vec()));
    let t = g.constant(Tensor::new(vec![1, 3], pose.translation.as_slice().to_vec()));
    let (grid, cam_valid) = g.reproject(d, r, t, &[k.as_array()]);
    let gv = g.value(grid);
    Ok(SampleGrid {
        height: depth.height,
        width: depth.width,
        coords: gv.data().chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
        in_bounds: grid_validity(gv, &cam_valid, k.width, k.height),
    })
}

/// Bilinear sampling of a `C×H×W` image; out-of-frame coordinates are clamped
/// to the border and reported invalid.
pub fn bilinear_sample(image: &Tensor, grid: &SampleGrid) -> Result<(Tensor, Vec<bool>)> {
    if image.rank() != 3 {
        return Err(shape_err(format!("expected C×H×W image, got {:?}", image.shape())));
    }
    let (c, h, w) = (image.dim(0), image.dim(1), image.dim(2));
    let mut g = Graph::new();
    let img = g.constant(image.clone().reshape(vec![1, c, h, w]));
    let gr = g.constant(grid.to_tensor());
    let out = g.grid_sample(img, gr);
    let valid = grid
        .coords
        .iter()
        .zip(&grid.in_bounds)
        .map(|(p, &ok)| ok && within_frame(p[0], p[1], w, h))
        .collect();
    Ok((g.value(out).clone().reshape(vec![c, grid.height, grid.width]), valid))
}

pub fn warp(source: &Tensor, depth: &DepthMap, k: &Intrinsics, pose: &PoseSE3) -> Result<(Tensor, Vec<bool>)> {
    if source.rank() != 3 || source.dim(1) != k.height || source.dim(2) != k.width {
        return Err(shape_err(format!(
            "source {:?} does not match intrinsics {}x{}",
            source.shape(),
            k.height,
            k.width
        )));
    }
    let grid = reproject(depth, k, pose)?;
    bilinear_sample(source, &grid)
}

/// Pose parameters as graph nodes: rotation matrices `N×3×3` and
/// translations `N×3`.
#[derive(Clone, Copy, Debug)]
pub struct PoseVars {
    pub rot: Var,
    pub trans: Var,
}

impl PoseVars {
    pub fn from_axisangle(g: &mut Graph, axisangle: Var, translation: Var) -> Self {
        let rot = g.rodrigues(axisangle);
        Self { rot, trans: translation }
    }

    pub fn constant(g: &mut Graph, poses: &[PoseSE3]) -> Self {
        let n = poses.len();
        let rot = poses
            .iter()
            .flat_map(|p| {
                let m = p.rotation_matrix();
                (0..9).map(move |k| m[(k / 3, k % 3)])
            })
            .collect();
        let trans = poses.iter().flat_map(|p| p.translation.iter().copied().collect::<Vec<_>>()).collect();
        Self {
            rot: g.constant(Tensor::new(vec![n, 3, 3], rot)),
            trans: g.constant(Tensor::new(vec![n, 3], trans)),
        }
    }

    pub fn inverse(&self, g: &mut Graph) -> Self {
        let n = g.shape(self.trans)[0];
        let rt = g.transpose_last(self.rot);
        let t = g.reshape(self.trans, &[n, 3, 1]);
        let rtt = g.bmm(rt, t);
        let rtt = g.reshape(rtt, &[n, 3]);
        let trans = g.neg(rtt);
        Self { rot: rt, trans }
    }
}

/// Differentiable batched warp. `source` is `N×C×H×W`, `depth` is
/// `N×1×H×W`; returns the warped images and a per-pixel validity mask.
pub fn warp_graph(
    g: &mut Graph,
    source: Var,
    depth: Var,
    pose: PoseVars,
    intrinsics: &[Intrinsics],
) -> (Var, Vec<bool>) {
    let k: Vec<[f64; 4]> = intrinsics.iter().map(Intrinsics::as_array).collect();
    let (_, _, h, w) = g.value(depth).dims4();
    let (grid, cam_valid) = g.reproject(depth, pose.rot, pose.trans, &k);
    let valid = grid_validity(g.value(grid), &cam_valid, w, h);
    (g.grid_sample(source, grid), valid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn quarter_turn_about_z_maps_x_to_y() {
        let r = axisangle_to_matrix([0.0, 0.0, FRAC_PI_2]);
        let y = r * Vector3::x();
        assert!((y - Vector3::y()).norm() < 1e-15);
    }

    #[test]
    fn tiny_rotation_matches_second_order_series() {
        let v = Vector3::new(0.3, -0.5, 0.8).normalize() * 1e-9;
        let k = v.cross_matrix();
        let series = Matrix3::identity() + k + 0.5 * k * k;
        assert!((axisangle_to_matrix(v.into()) - series).abs().max() < 1e-12);
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let p = PoseSE3::new([0.2, -0.4, 1.1], [0.5, 2.0, -1.0]);
        let q = p.compose(&p.inverse());
        assert!(q.rotation.norm() < 1e-12 && q.translation.norm() < 1e-12);
        assert_eq!(PoseSE3::identity().compose(&p).translation, p.translation);
    }

    #[test]
    fn seven_number_roundtrip() {
        let p = PoseSE3::new([0.1, 0.7, -0.3], [1.0, 2.0, 3.0]);
        let q = PoseSE3::from_seven(p.to_seven());
        assert!((p.rotation - q.rotation).norm() < 1e-12);
        assert_eq!(p.translation, q.translation);
    }

    #[test]
    fn identity_pose_gives_pixel_grid() {
        let k = Intrinsics::new(1.0, 1.0, 0.0, 0.0, 5, 4).unwrap();
        let d = DepthMap::new(4, 5, vec![1.0; 20]).unwrap();
        let grid = reproject(&d, &k, &PoseSE3::identity()).unwrap();
        assert_eq!(grid, SampleGrid::identity(4, 5));
    }

    #[test]
    fn half_pixel_shift_averages_blocks() {
        let ramp = Tensor::from_fn(vec![1, 4, 4], |k| (k * k) as f64 * 0.01);
        let mut grid = SampleGrid::identity(3, 3);
        for (p, c) in grid.coords.iter_mut().enumerate() {
            *c = [(p % 3) as f64 + 0.5, (p / 3) as f64 + 0.5];
        }
        let (out, valid) = bilinear_sample(&ramp, &grid).unwrap();
        assert!(valid.iter().all(|&v| v));
        let at = |i: usize, j: usize| ramp.data()[i * 4 + j];
        for i in 0..3 {
            for j in 0..3 {
                let mean = (at(i, j) + at(i, j + 1) + at(i + 1, j) + at(i + 1, j + 1)) / 4.0;
                assert!((out.data()[i * 3 + j] - mean).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rejects_nonpositive_depth() {
        assert!(DepthMap::new(1, 2, vec![1.0, 0.0]).is_err());
        assert!(DepthMap::new(1, 2, vec![1.0, -3.0]).is_err());
    }

    #[test]
    fn behind_camera_is_out_of_bounds() {
        let k = Intrinsics::new(2.0, 2.0, 1.0, 1.0, 3, 3).unwrap();
        let d = DepthMap::new(3, 3, vec![1.0; 9]).unwrap();
        let grid = reproject(&d, &k, &PoseSE3::new([0.0; 3], [0.0, 0.0, -2.0])).unwrap();
        assert!(grid.in_bounds.iter().all(|&v| !v));
    }
}
