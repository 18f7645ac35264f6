//! Image-shaped operations on NCHW tensors: convolution, padding, pooling,
//! resampling and batch normalization.

use super::graph::{Graph, Op, Var};
use super::tensor::Tensor;

pub(crate) const BN_EPS: f64 = 1e-5;

/// `c = a·b + beta·c` for row-major `c` (m×n); `a` is m×k and `b` is k×n,
/// each addressed through explicit (row, column) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    assert!(k == 0 || a.len() > (m - 1) * a_strides.0 + (k - 1) * a_strides.1);
    assert!(k == 0 || b.len() > (k - 1) * b_strides.0 + (n - 1) * b_strides.1);
    // SAFETY: the asserts above bound every address touched by the kernel.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }
}

fn im2col(x: &[f64], g: ConvGeom, col: &mut [f64]) {
    let hw = g.ho * g.wo;
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut col[row * hw..(row + 1) * hw];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let seg = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        seg.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in seg.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f64], g: ConvGeom, x: &mut [f64]) {
    let hw = g.ho * g.wo;
    for ci in 0..g.cin {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &col[row * hw..(row + 1) * hw];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

/// Source taps for `align_corners = false` bilinear resizing along one axis.
fn resize_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

impl Graph {
    /// 2-D cross-correlation with zero padding. `w` is `Cout×Cin×k×k`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let (n, cin, h, wd) = self.value(x).dims4();
        let (cout, wcin, k, k2) = self.value(w).dims4();
        assert_eq!(cin, wcin, "conv2d channel mismatch");
        assert_eq!(k, k2, "conv2d expects square kernels");
        assert!(h + 2 * pad >= k && wd + 2 * pad >= k, "conv2d kernel larger than input");
        let geom = ConvGeom {
            cin,
            h,
            w: wd,
            k,
            stride,
            pad,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (wd + 2 * pad - k) / stride + 1,
        };
        let hw = geom.ho * geom.wo;
        let rows = geom.rows();
        let mut out = Tensor::zeros(vec![n, cout, geom.ho, geom.wo]);
        let mut col = if geom.is_pointwise() {
            Vec::new()
        } else {
            vec![0.0; rows * hw]
        };
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            let od = out.data_mut();
            for ni in 0..n {
                let xs = &xv[ni * cin * h * wd..(ni + 1) * cin * h * wd];
                let cols: &[f64] = if geom.is_pointwise() {
                    xs
                } else {
                    im2col(xs, geom, &mut col);
                    &col
                };
                gemm(
                    cout,
                    rows,
                    hw,
                    wv,
                    (rows, 1),
                    cols,
                    (hw, 1),
                    0.0,
                    &mut od[ni * cout * hw..(ni + 1) * cout * hw],
                );
            }
            if let Some(b) = b {
                let bv = self.value(b).data();
                assert_eq!(bv.len(), cout);
                for ni in 0..n {
                    for co in 0..cout {
                        let base = (ni * cout + co) * hw;
                        for v in &mut od[base..base + hw] {
                            *v += bv[co];
                        }
                    }
                }
            }
        }
        self.push(
            out,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
        )
    }

    /// Reflection padding of the two spatial axes.
    pub fn reflect_pad(&mut self, x: Var, pad: usize) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        assert!(pad < h && pad < w, "reflection pad larger than input");
        let (hp, wp) = (h + 2 * pad, w + 2 * pad);
        let xv = self.value(x);
        let mut out = Tensor::zeros(vec![n, c, hp, wp]);
        let od = out.data_mut();
        for p in 0..n * c {
            for y in 0..hp {
                let sy = reflect(y as isize - pad as isize, h);
                for xx in 0..wp {
                    let sx = reflect(xx as isize - pad as isize, w);
                    od[(p * hp + y) * wp + xx] = xv.data()[(p * h + sy) * w + sx];
                }
            }
        }
        self.push(out, Op::ReflectPad(x, pad))
    }

    /// Max pooling with implicit `-inf` padding.
    pub fn max_pool(&mut self, x: Var, k: usize, stride: usize, pad: usize) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        let xv = self.value(x).data();
        let mut out = Tensor::zeros(vec![n, c, ho, wo]);
        let mut argmax = vec![0usize; n * c * ho * wo];
        let od = out.data_mut();
        for p in 0..n * c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = (p * h + iy as usize) * w + ix as usize;
                            if xv[idx] > best {
                                best = xv[idx];
                                best_i = idx;
                            }
                        }
                    }
                    let o = (p * ho + oy) * wo + ox;
                    od[o] = best;
                    argmax[o] = best_i;
                }
            }
        }
        self.push(out, Op::MaxPool { input: x, argmax })
    }

    /// Unpadded `k×k` mean pooling with stride 1.
    pub fn avg_pool(&mut self, x: Var, k: usize) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let (ho, wo) = (h + 1 - k, w + 1 - k);
        let xv = self.value(x).data();
        let norm = 1.0 / (k * k) as f64;
        let mut out = Tensor::zeros(vec![n, c, ho, wo]);
        let od = out.data_mut();
        for p in 0..n * c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = 0.0;
                    for ky in 0..k {
                        let row = (p * h + oy + ky) * w + ox;
                        s += xv[row..row + k].iter().sum::<f64>();
                    }
                    od[(p * ho + oy) * wo + ox] = s * norm;
                }
            }
        }
        self.push(out, Op::AvgPool(x, k))
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let (ho, wo) = (h * factor, w * factor);
        let xv = self.value(x).data();
        let mut out = Tensor::zeros(vec![n, c, ho, wo]);
        let od = out.data_mut();
        for p in 0..n * c {
            for y in 0..ho {
                for xx in 0..wo {
                    od[(p * ho + y) * wo + xx] = xv[(p * h + y / factor) * w + xx / factor];
                }
            }
        }
        self.push(out, Op::UpsampleNearest(x, factor))
    }

    /// Bilinear resize with half-pixel centres (`align_corners = false`).
    pub fn resize_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let ty = resize_taps(h, out_h);
        let tx = resize_taps(w, out_w);
        let xv = self.value(x).data();
        let mut out = Tensor::zeros(vec![n, c, out_h, out_w]);
        let od = out.data_mut();
        for p in 0..n * c {
            let plane = &xv[p * h * w..(p + 1) * h * w];
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let top = plane[y0 * w + x0] * (1.0 - lx) + plane[y0 * w + x1] * lx;
                    let bot = plane[y1 * w + x0] * (1.0 - lx) + plane[y1 * w + x1] * lx;
                    od[(p * out_h + oy) * out_w + ox] = top * (1.0 - ly) + bot * ly;
                }
            }
        }
        self.push(out, Op::ResizeBilinear(x))
    }

    /// Batch normalization using the statistics of the current batch.
    /// Returns the output and the per-channel (mean, unbiased variance).
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var) -> (Var, Vec<f64>, Vec<f64>) {
        let (n, c, h, w) = self.value(x).dims4();
        let m = n * h * w;
        let xv = self.value(x).data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ci in 0..c {
            let mut s = 0.0;
            for ni in 0..n {
                let base = (ni * c + ci) * h * w;
                s += xv[base..base + h * w].iter().sum::<f64>();
            }
            let mu = s / m as f64;
            let mut v = 0.0;
            for ni in 0..n {
                let base = (ni * c + ci) * h * w;
                v += xv[base..base + h * w].iter().map(|x| (x - mu) * (x - mu)).sum::<f64>();
            }
            mean[ci] = mu;
            var[ci] = v / m as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let unbiased: Vec<f64> = var
            .iter()
            .map(|v| if m > 1 { v * m as f64 / (m - 1) as f64 } else { *v })
            .collect();
        let out = self.bn_apply(x, gamma, beta, &mean, inv_std, true);
        (out, mean, unbiased)
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f64], var: &[f64]) -> Var {
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        self.bn_apply(x, gamma, beta, mean, inv_std, false)
    }

    fn bn_apply(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: Vec<f64>,
        batch_stats: bool,
    ) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        assert_eq!(self.value(gamma).numel(), c);
        assert_eq!(self.value(beta).numel(), c);
        let xv = self.value(x).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![0.0; n * c * h * w];
        let mut out = Tensor::zeros(vec![n, c, h, w]);
        let od = out.data_mut();
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * h * w;
                for k in base..base + h * w {
                    let xh = (xv[k] - mean[ci]) * inv_std[ci];
                    xhat[k] = xh;
                    od[k] = gv[ci] * xh + bv[ci];
                }
            }
        }
        self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
        )
    }

    pub(crate) fn backward_spatial(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let (n, cin, h, wd) = self.value(*x).dims4();
                let (cout, _, k, _) = self.value(*w).dims4();
                let (_, _, ho, wo) = g.dims4();
                let geom = ConvGeom {
                    cin,
                    h,
                    w: wd,
                    k,
                    stride: *stride,
                    pad: *pad,
                    ho,
                    wo,
                };
                let hw = ho * wo;
                let rows = geom.rows();
                let gd = g.data();
                if let Some(b) = b {
                    if self.requires_grad(*b) {
                        let mut gb = Tensor::zeros(vec![cout]);
                        for ni in 0..n {
                            for co in 0..cout {
                                let base = (ni * cout + co) * hw;
                                gb.data_mut()[co] += gd[base..base + hw].iter().sum::<f64>();
                            }
                        }
                        self.accumulate(grads, *b, gb);
                    }
                }
                let need_w = self.requires_grad(*w);
                let need_x = self.requires_grad(*x);
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let mut gw = Tensor::zeros(self.shape(*w).to_vec());
                let mut gx = Tensor::zeros(self.shape(*x).to_vec());
                let mut col = vec![0.0; rows * hw];
                for ni in 0..n {
                    let go = &gd[ni * cout * hw..(ni + 1) * cout * hw];
                    if need_w {
                        let xs = &xv[ni * cin * h * wd..(ni + 1) * cin * h * wd];
                        let cols: &[f64] = if geom.is_pointwise() {
                            xs
                        } else {
                            im2col(xs, geom, &mut col);
                            &col
                        };
                        gemm(cout, hw, rows, go, (hw, 1), cols, (1, hw), 1.0, gw.data_mut());
                    }
                    if need_x {
                        let gxs = &mut gx.data_mut()[ni * cin * h * wd..(ni + 1) * cin * h * wd];
                        if geom.is_pointwise() {
                            gemm(rows, cout, hw, wv, (1, rows), go, (hw, 1), 0.0, gxs);
                        } else {
                            gemm(rows, cout, hw, wv, (1, rows), go, (hw, 1), 0.0, &mut col);
                            col2im(&col, geom, gxs);
                        }
                    }
                }
                if need_w {
                    self.accumulate(grads, *w, gw);
                }
                if need_x {
                    self.accumulate(grads, *x, gx);
                }
            }
            Op::ReflectPad(x, pad) => {
                let (n, c, h, w) = self.value(*x).dims4();
                let (hp, wp) = (h + 2 * pad, w + 2 * pad);
                let mut gx = Tensor::zeros(vec![n, c, h, w]);
                let gxd = gx.data_mut();
                for p in 0..n * c {
                    for y in 0..hp {
                        let sy = reflect(y as isize - *pad as isize, h);
                        for xx in 0..wp {
                            let sx = reflect(xx as isize - *pad as isize, w);
                            gxd[(p * h + sy) * w + sx] += g.data()[(p * hp + y) * wp + xx];
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::MaxPool { input, argmax } => {
                let mut gx = Tensor::zeros(self.shape(*input).to_vec());
                for (o, &src) in argmax.iter().enumerate() {
                    gx.data_mut()[src] += g.data()[o];
                }
                self.accumulate(grads, *input, gx);
            }
            Op::AvgPool(x, k) => {
                let (n, c, h, w) = self.value(*x).dims4();
                let (ho, wo) = (h + 1 - k, w + 1 - k);
                let norm = 1.0 / (k * k) as f64;
                let mut gx = Tensor::zeros(vec![n, c, h, w]);
                let gxd = gx.data_mut();
                for p in 0..n * c {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let v = g.data()[(p * ho + oy) * wo + ox] * norm;
                            for ky in 0..*k {
                                let row = (p * h + oy + ky) * w + ox;
                                for t in &mut gxd[row..row + k] {
                                    *t += v;
                                }
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::UpsampleNearest(x, f) => {
                let (n, c, h, w) = self.value(*x).dims4();
                let (ho, wo) = (h * f, w * f);
                let mut gx = Tensor::zeros(vec![n, c, h, w]);
                let gxd = gx.data_mut();
                for p in 0..n * c {
                    for y in 0..ho {
                        for xx in 0..wo {
                            gxd[(p * h + y / f) * w + xx / f] += g.data()[(p * ho + y) * wo + xx];
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::ResizeBilinear(x) => {
                let (n, c, h, w) = self.value(*x).dims4();
                let (_, _, out_h, out_w) = g.dims4();
                let ty = resize_taps(h, out_h);
                let tx = resize_taps(w, out_w);
                let mut gx = Tensor::zeros(vec![n, c, h, w]);
                let gxd = gx.data_mut();
                for p in 0..n * c {
                    let plane = &mut gxd[p * h * w..(p + 1) * h * w];
                    for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                            let v = g.data()[(p * out_h + oy) * out_w + ox];
                            plane[y0 * w + x0] += v * (1.0 - ly) * (1.0 - lx);
                            plane[y0 * w + x1] += v * (1.0 - ly) * lx;
                            plane[y1 * w + x0] += v * ly * (1.0 - lx);
                            plane[y1 * w + x1] += v * ly * lx;
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let (n, c, h, w) = self.value(*x).dims4();
                let hw = h * w;
                let m = (n * hw) as f64;
                let gv = self.value(*gamma).data();
                let gd = g.data();
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * hw;
                        for k in base..base + hw {
                            sum_g[ci] += gd[k];
                            sum_gx[ci] += gd[k] * xhat[k];
                        }
                    }
                }
                if self.requires_grad(*gamma) {
                    self.accumulate(grads, *gamma, Tensor::new(self.shape(*gamma).to_vec(), sum_gx.clone()));
                }
                if self.requires_grad(*beta) {
                    self.accumulate(grads, *beta, Tensor::new(self.shape(*beta).to_vec(), sum_g.clone()));
                }
                if self.requires_grad(*x) {
                    let mut gx = Tensor::zeros(vec![n, c, h, w]);
                    let gxd = gx.data_mut();
                    for ni in 0..n {
                        for ci in 0..c {
                            let base = (ni * c + ci) * hw;
                            let scale = gv[ci] * inv_std[ci];
                            for k in base..base + hw {
                                gxd[k] = if *batch_stats {
                                    scale * (gd[k] - sum_g[ci] / m - xhat[k] * sum_gx[ci] / m)
                                } else {
                                    scale * gd[k]
                                };
                            }
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
            }
            _ => unreachable!("not a spatial op"),
        }
    }
}
