//! Differentiable geometry: bilinear grid sampling, axis-angle rotations,
//! pinhole reprojection, batched matrix products and pairwise distances.

use super::graph::{Graph, Op, Var};
use super::tensor::Tensor;

/// Below this rotation angle the Rodrigues coefficients switch to their
/// Taylor series; the closed forms lose precision to cancellation.
const SMALL_ANGLE: f64 = 1e-2;

/// Rodrigues coefficients `A = sinθ/θ`, `B = (1−cosθ)/θ²` and their
/// derivatives divided by θ, as a function of θ² = ‖v‖².
pub(crate) fn rodrigues_coeffs(theta_sq: f64) -> (f64, f64, f64, f64) {
    let theta = theta_sq.sqrt();
    if theta < SMALL_ANGLE {
        let t = theta_sq;
        let a = 1.0 - t / 6.0 + t * t / 120.0;
        let b = 0.5 - t / 24.0 + t * t / 720.0;
        let da = -1.0 / 3.0 + t / 30.0 - t * t / 840.0;
        let db = -1.0 / 12.0 + t / 180.0 - t * t / 6720.0;
        (a, b, da, db)
    } else {
        let (s, c) = theta.sin_cos();
        let half = (0.5 * theta).sin();
        let one_minus_cos = 2.0 * half * half;
        let a = s / theta;
        let b = one_minus_cos / theta_sq;
        let da = (theta * c - s) / (theta_sq * theta);
        let db = (theta * s - 2.0 * one_minus_cos) / (theta_sq * theta_sq);
        (a, b, da, db)
    }
}

#[inline]
fn skew(v: [f64; 3]) -> [[f64; 3]; 3] {
    [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]]
}

#[inline]
fn mat_mul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Rotation matrix of an axis-angle vector via Rodrigues' formula.
pub(crate) fn rodrigues(v: [f64; 3]) -> [[f64; 3]; 3] {
    let (a, b, _, _) = rodrigues_coeffs(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    let k = skew(v);
    let k2 = mat_mul3(&k, &k);
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = if i == j { 1.0 } else { 0.0 } + a * k[i][j] + b * k2[i][j];
        }
    }
    r
}

/// `∂R/∂v_k` for k = 0..3.
fn rodrigues_jacobian(v: [f64; 3]) -> [[[f64; 3]; 3]; 3] {
    let (a, b, da, db) = rodrigues_coeffs(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    let k = skew(v);
    let k2 = mat_mul3(&k, &k);
    let mut out = [[[0.0; 3]; 3]; 3];
    for (axis, d) in out.iter_mut().enumerate() {
        let mut e = [0.0; 3];
        e[axis] = 1.0;
        let ek = skew(e);
        let ek_k = mat_mul3(&ek, &k);
        let k_ek = mat_mul3(&k, &ek);
        for i in 0..3 {
            for j in 0..3 {
                d[i][j] = da * v[axis] * k[i][j]
                    + a * ek[i][j]
                    + db * v[axis] * k2[i][j]
                    + b * (ek_k[i][j] + k_ek[i][j]);
            }
        }
    }
    out
}

struct Bilinear {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    ax: f64,
    ay: f64,
    dx_live: bool,
    dy_live: bool,
}

#[inline]
fn bilinear_taps(x: f64, y: f64, w: usize, h: usize) -> Bilinear {
    let xm = (w - 1) as f64;
    let ym = (h - 1) as f64;
    let xc = if x.is_nan() { 0.0 } else { x.clamp(0.0, xm) };
    let yc = if y.is_nan() { 0.0 } else { y.clamp(0.0, ym) };
    let x0 = (xc.floor() as usize).min(w - 1);
    let y0 = (yc.floor() as usize).min(h - 1);
    Bilinear {
        x0,
        x1: (x0 + 1).min(w - 1),
        y0,
        y1: (y0 + 1).min(h - 1),
        ax: xc - x0 as f64,
        ay: yc - y0 as f64,
        dx_live: x >= 0.0 && x <= xm,
        dy_live: y >= 0.0 && y <= ym,
    }
}

impl Graph {
    /// Samples `image` (N×C×Hs×Ws) at continuous pixel coordinates `grid`
    /// (N×Ho×Wo×2, last axis = (x, y)) with clamp-to-edge bilinear
    /// interpolation.
    pub fn grid_sample(&mut self, image: Var, grid: Var) -> Var {
        let (n, c, hs, ws) = self.value(image).dims4();
        let gs = self.shape(grid).to_vec();
        assert!(gs.len() == 4 && gs[0] == n && gs[3] == 2, "grid must be N×H×W×2");
        let (ho, wo) = (gs[1], gs[2]);
        let iv = self.value(image).data();
        let gv = self.value(grid).data();
        let mut out = Tensor::zeros(vec![n, c, ho, wo]);
        let od = out.data_mut();
        for ni in 0..n {
            for p in 0..ho * wo {
                let gi = (ni * ho * wo + p) * 2;
                let t = bilinear_taps(gv[gi], gv[gi + 1], ws, hs);
                for ci in 0..c {
                    let plane = &iv[(ni * c + ci) * hs * ws..(ni * c + ci + 1) * hs * ws];
                    let top = plane[t.y0 * ws + t.x0] * (1.0 - t.ax) + plane[t.y0 * ws + t.x1] * t.ax;
                    let bot = plane[t.y1 * ws + t.x0] * (1.0 - t.ax) + plane[t.y1 * ws + t.x1] * t.ax;
                    od[(ni * c + ci) * ho * wo + p] = top * (1.0 - t.ay) + bot * t.ay;
                }
            }
        }
        self.push(out, Op::GridSample { image, grid })
    }

    /// Axis-angle vectors (N×3) to rotation matrices (N×3×3).
    pub fn rodrigues(&mut self, v: Var) -> Var {
        let shape = self.shape(v).to_vec();
        assert!(shape.len() == 2 && shape[1] == 3, "rodrigues expects N×3");
        let n = shape[0];
        let vd = self.value(v).data();
        let mut data = Vec::with_capacity(n * 9);
        for ni in 0..n {
            let r = rodrigues([vd[ni * 3], vd[ni * 3 + 1], vd[ni * 3 + 2]]);
            data.extend(r.iter().flatten());
        }
        self.push(Tensor::new(vec![n, 3, 3], data), Op::Rodrigues(v))
    }

    /// Batched matrix product `N×m×k · N×k×n`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Var {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        assert!(sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0] && sa[2] == sb[1], "bmm shapes {sa:?} {sb:?}");
        let (n, m, k, p) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = Tensor::zeros(vec![n, m, p]);
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for ni in 0..n {
            let aa = &ad[ni * m * k..(ni + 1) * m * k];
            let bb = &bd[ni * k * p..(ni + 1) * k * p];
            let oo = &mut out.data_mut()[ni * m * p..(ni + 1) * m * p];
            for i in 0..m {
                for j in 0..p {
                    oo[i * p + j] = (0..k).map(|t| aa[i * k + t] * bb[t * p + j]).sum();
                }
            }
        }
        self.push(out, Op::Bmm(a, b))
    }

    /// Projects every target pixel, lifted by `depth` (N×1×H×W), through the
    /// rigid transform (`rot` N×3×3, `trans` N×3) into the source camera.
    /// Returns source pixel coordinates (N×H×W×2) and a per-pixel flag that is
    /// false where the transformed depth is not positive. `intrinsics` holds
    /// `[fx, fy, cx, cy]` per batch item.
    pub fn reproject(
        &mut self,
        depth: Var,
        rot: Var,
        trans: Var,
        intrinsics: &[[f64; 4]],
    ) -> (Var, Vec<bool>) {
        let (n, c, h, w) = self.value(depth).dims4();
        assert_eq!(c, 1, "depth must have one channel");
        assert_eq!(self.shape(rot), &[n, 3, 3]);
        assert_eq!(self.shape(trans), &[n, 3]);
        assert_eq!(intrinsics.len(), n);
        let dd = self.value(depth).data();
        let rd = self.value(rot).data();
        let td = self.value(trans).data();
        let mut grid = Tensor::zeros(vec![n, h, w, 2]);
        let mut cam_valid = vec![false; n * h * w];
        let gd = grid.data_mut();
        for ni in 0..n {
            let [fx, fy, cx, cy] = intrinsics[ni];
            let r = &rd[ni * 9..ni * 9 + 9];
            let t = &td[ni * 3..ni * 3 + 3];
            for i in 0..h {
                for j in 0..w {
                    let p = (ni * h + i) * w + j;
                    let d = dd[p];
                    let ray = [(j as f64 - cx) / fx, (i as f64 - cy) / fy, 1.0];
                    // The transformed point divided by `d`, projected as an offset from
                    // the pixel so that the identity transform returns (j, i) exactly.
                    let u: [f64; 3] = std::array::from_fn(|a| {
                        r[a * 3] * ray[0] + r[a * 3 + 1] * ray[1] + r[a * 3 + 2] * ray[2] + t[a] / d
                    });
                    if u[2] > 0.0 {
                        gd[p * 2] = j as f64 + fx * (u[0] / u[2] - ray[0]);
                        gd[p * 2 + 1] = i as f64 + fy * (u[1] / u[2] - ray[1]);
                        cam_valid[p] = true;
                    } else {
                        gd[p * 2] = -1.0;
                        gd[p * 2 + 1] = -1.0;
                    }
                }
            }
        }
        let valid = cam_valid.clone();
        let v = self.push(
            grid,
            Op::Reproject {
                depth,
                rot,
                trans,
                intrinsics: intrinsics.to_vec(),
                cam_valid,
            },
        );
        (v, valid)
    }

    /// Squared Euclidean distances between the column vectors of
    /// `a` (N×C×P) and `b` (N×C×Q), giving N×P×Q.
    pub fn pairwise_sq_dist(&mut self, a: Var, b: Var) -> Var {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        assert!(sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0] && sa[1] == sb[1], "pairwise_sq_dist shapes {sa:?} {sb:?}");
        let (n, c, p, q) = (sa[0], sa[1], sa[2], sb[2]);
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = Tensor::zeros(vec![n, p, q]);
        let od = out.data_mut();
        for ni in 0..n {
            for ci in 0..c {
                let ar = &ad[(ni * c + ci) * p..(ni * c + ci + 1) * p];
                let br = &bd[(ni * c + ci) * q..(ni * c + ci + 1) * q];
                for i in 0..p {
                    let row = &mut od[(ni * p + i) * q..(ni * p + i + 1) * q];
                    for j in 0..q {
                        let d = ar[i] - br[j];
                        row[j] += d * d;
                    }
                }
            }
        }
        self.push(out, Op::PairwiseSqDist(a, b))
    }

    pub(crate) fn backward_geometric(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::GridSample { image, grid } => {
                let (n, c, hs, ws) = self.value(*image).dims4();
                let (_, _, ho, wo) = g.dims4();
                let iv = self.value(*image).data();
                let gv = self.value(*grid).data();
                let need_img = self.requires_grad(*image);
                let need_grid = self.requires_grad(*grid);
                let mut gimg = Tensor::zeros(if need_img { vec![n, c, hs, ws] } else { vec![0] });
                let mut ggrid = Tensor::zeros(if need_grid { vec![n, ho, wo, 2] } else { vec![0] });
                for ni in 0..n {
                    for p in 0..ho * wo {
                        let gi = (ni * ho * wo + p) * 2;
                        let t = bilinear_taps(gv[gi], gv[gi + 1], ws, hs);
                        let (mut dx, mut dy) = (0.0, 0.0);
                        for ci in 0..c {
                            let up = g.data()[(ni * c + ci) * ho * wo + p];
                            let base = (ni * c + ci) * hs * ws;
                            if need_img {
                                let gd = gimg.data_mut();
                                gd[base + t.y0 * ws + t.x0] += up * (1.0 - t.ax) * (1.0 - t.ay);
                                gd[base + t.y0 * ws + t.x1] += up * t.ax * (1.0 - t.ay);
                                gd[base + t.y1 * ws + t.x0] += up * (1.0 - t.ax) * t.ay;
                                gd[base + t.y1 * ws + t.x1] += up * t.ax * t.ay;
                            }
                            if need_grid {
                                let i00 = iv[base + t.y0 * ws + t.x0];
                                let i01 = iv[base + t.y0 * ws + t.x1];
                                let i10 = iv[base + t.y1 * ws + t.x0];
                                let i11 = iv[base + t.y1 * ws + t.x1];
                                if t.dx_live {
                                    dx += up * ((1.0 - t.ay) * (i01 - i00) + t.ay * (i11 - i10));
                                }
                                if t.dy_live {
                                    dy += up * ((1.0 - t.ax) * (i10 - i00) + t.ax * (i11 - i01));
                                }
                            }
                        }
                        if need_grid {
                            ggrid.data_mut()[gi] = dx;
                            ggrid.data_mut()[gi + 1] = dy;
                        }
                    }
                }
                if need_img {
                    self.accumulate(grads, *image, gimg);
                }
                if need_grid {
                    self.accumulate(grads, *grid, ggrid);
                }
            }
            Op::Rodrigues(v) => {
                let n = self.shape(*v)[0];
                let vd = self.value(*v).data();
                let mut gv = Tensor::zeros(vec![n, 3]);
                for ni in 0..n {
                    let jac = rodrigues_jacobian([vd[ni * 3], vd[ni * 3 + 1], vd[ni * 3 + 2]]);
                    let gm = &g.data()[ni * 9..ni * 9 + 9];
                    for (k, d) in jac.iter().enumerate() {
                        gv.data_mut()[ni * 3 + k] =
                            (0..9).map(|e| gm[e] * d[e / 3][e % 3]).sum::<f64>();
                    }
                }
                self.accumulate(grads, *v, gv);
            }
            Op::Bmm(a, b) => {
                let sa = self.shape(*a).to_vec();
                let sb = self.shape(*b).to_vec();
                let (n, m, k, p) = (sa[0], sa[1], sa[2], sb[2]);
                let (ad, bd, gd) = (self.value(*a).data(), self.value(*b).data(), g.data());
                if self.requires_grad(*a) {
                    let mut ga = Tensor::zeros(sa.clone());
                    for ni in 0..n {
                        for r in 0..m {
                            for t in 0..k {
                                ga.data_mut()[(ni * m + r) * k + t] = (0..p)
                                    .map(|j| gd[(ni * m + r) * p + j] * bd[(ni * k + t) * p + j])
                                    .sum();
                            }
                        }
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let mut gb = Tensor::zeros(sb.clone());
                    for ni in 0..n {
                        for t in 0..k {
                            for j in 0..p {
                                gb.data_mut()[(ni * k + t) * p + j] = (0..m)
                                    .map(|r| ad[(ni * m + r) * k + t] * gd[(ni * m + r) * p + j])
                                    .sum();
                            }
                        }
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Reproject {
                depth,
                rot,
                trans,
                intrinsics,
                cam_valid,
            } => {
                let (n, _, h, w) = self.value(*depth).dims4();
                let dd = self.value(*depth).data();
                let rd = self.value(*rot).data();
                let td = self.value(*trans).data();
                let mut gdepth = Tensor::zeros(vec![n, 1, h, w]);
                let mut grot = Tensor::zeros(vec![n, 3, 3]);
                let mut gtrans = Tensor::zeros(vec![n, 3]);
                for ni in 0..n {
                    let [fx, fy, cx, cy] = intrinsics[ni];
                    let r = &rd[ni * 9..ni * 9 + 9];
                    let t = &td[ni * 3..ni * 3 + 3];
                    for i in 0..h {
                        for j in 0..w {
                            let p = (ni * h + i) * w + j;
                            if !cam_valid[p] {
                                continue;
                            }
                            let (gu, gvv) = (g.data()[p * 2], g.data()[p * 2 + 1]);
                            let d = dd[p];
                            let ray = [(j as f64 - cx) / fx, (i as f64 - cy) / fy, 1.0];
                            let rr: [f64; 3] = std::array::from_fn(|a| {
                                r[a * 3] * ray[0] + r[a * 3 + 1] * ray[1] + r[a * 3 + 2] * ray[2]
                            });
                            let q: [f64; 3] = std::array::from_fn(|a| d * rr[a] + t[a]);
                            let iz = 1.0 / q[2];
                            let gq = [
                                gu * fx * iz,
                                gvv * fy * iz,
                                -(gu * fx * q[0] + gvv * fy * q[1]) * iz * iz,
                            ];
                            gdepth.data_mut()[p] = gq[0] * rr[0] + gq[1] * rr[1] + gq[2] * rr[2];
                            for a in 0..3 {
                                gtrans.data_mut()[ni * 3 + a] += gq[a];
                                for b in 0..3 {
                                    grot.data_mut()[ni * 9 + a * 3 + b] += gq[a] * d * ray[b];
                                }
                            }
                        }
                    }
                }
                self.accumulate(grads, *depth, gdepth);
                self.accumulate(grads, *rot, grot);
                self.accumulate(grads, *trans, gtrans);
            }
            Op::PairwiseSqDist(a, b) => {
                let sa = self.shape(*a).to_vec();
                let sb = self.shape(*b).to_vec();
                let (n, c, p, q) = (sa[0], sa[1], sa[2], sb[2]);
                let (ad, bd, gd) = (self.value(*a).data(), self.value(*b).data(), g.data());
                let mut ga = Tensor::zeros(sa);
                let mut gb = Tensor::zeros(sb);
                for ni in 0..n {
                    for ci in 0..c {
                        let ar = &ad[(ni * c + ci) * p..(ni * c + ci + 1) * p];
                        let br = &bd[(ni * c + ci) * q..(ni * c + ci + 1) * q];
                        for i in 0..p {
                            let grow = &gd[(ni * p + i) * q..(ni * p + i + 1) * q];
                            let mut acc = 0.0;
                            for j in 0..q {
                                let t = 2.0 * grow[j] * (ar[i] - br[j]);
                                acc += t;
                                gb.data_mut()[(ni * c + ci) * q + j] -= t;
                            }
                            ga.data_mut()[(ni * c + ci) * p + i] += acc;
                        }
                    }
                }
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            _ => unreachable!("not a geometric op"),
        }
    }
}
