use super::tensor::Tensor;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) needs_grad: bool,
}

pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    Exp(Var),
    Ln(Var),
    Abs(Var),
    Sqrt(Var),
    Square(Var),
    Relu(Var),
    Elu(Var),
    Sigmoid(Var),
    Clamp(Var, f64, f64),
    Minimum(Var, Var),
    SumAxes(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Narrow {
        input: Var,
        axis: usize,
        start: usize,
    },
    Concat(Vec<Var>, usize),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    ReflectPad(Var, usize),
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    AvgPool(Var, usize),
    UpsampleNearest(Var, usize),
    ResizeBilinear(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    GridSample {
        image: Var,
        grid: Var,
    },
    Rodrigues(Var),
    Bmm(Var, Var),
    Reproject {
        depth: Var,
        rot: Var,
        trans: Var,
        intrinsics: Vec<[f64; 4]>,
        cam_valid: Vec<bool>,
    },
    PairwiseSqDist(Var, Var),
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | Minimum(a, b) | Bmm(a, b) => {
                vec![*a, *b]
            }
            PairwiseSqDist(a, b) => vec![*a, *b],
            Neg(a) | AddScalar(a) | MulScalar(a, _) | Exp(a) | Ln(a) | Abs(a) | Sqrt(a)
            | Square(a) | Relu(a) | Elu(a) | Sigmoid(a) | Clamp(a, _, _) | SumAxes(a)
            | Reshape(a) | Permute(a, _) | ReflectPad(a, _) | AvgPool(a, _)
            | UpsampleNearest(a, _) | ResizeBilinear(a) | Rodrigues(a) => vec![*a],
            Narrow { input, .. } | MaxPool { input, .. } => vec![*input],
            Concat(v, _) => v.clone(),
            Conv2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter().copied());
                v
            }
            BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            GridSample { image, grid } => vec![*image, *grid],
            Reproject {
                depth, rot, trans, ..
            } => vec![*depth, *rot, *trans],
        }
    }
}

/// Reverse-mode tape. Every operation appends a node; [`Graph::backward`]
/// walks the tape in reverse and accumulates gradients into every node that
/// transitively depends on a leaf created with `requires_grad = true`.
#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = op.parents().iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    // ---- elementwise -------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = broadcast_binary(self.value(a), self.value(b), |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = broadcast_binary(self.value(a), self.value(b), |x, y| x - y);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = broadcast_binary(self.value(a), self.value(b), |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let out = broadcast_binary(self.value(a), self.value(b), |x, y| x / y);
        self.push(out, Op::Div(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| -x);
        self.push(out, Op::Neg(a))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::AddScalar(a))
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::MulScalar(a, c))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Ln(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::abs);
        self.push(out, Op::Abs(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::sqrt);
        self.push(out, Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(out, Op::Relu(a))
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .map(|x| if x > 0.0 { x } else { x.exp_m1() });
        self.push(out, Op::Elu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi))
    }

    /// Elementwise minimum of two same-shape tensors; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        let out = self
            .value(a)
            .zip_map(self.value(b), |x, y| if x <= y { x } else { y });
        self.push(out, Op::Minimum(a, b))
    }

    // ---- reductions and shape ------------------------------------------

    /// Sums over `axes`, keeping them as size-1 dimensions.
    pub fn sum_axes(&mut self, a: Var, axes: &[usize]) -> Var {
        let mut shape = self.shape(a).to_vec();
        for &ax in axes {
            shape[ax] = 1;
        }
        let out = sum_to_shape(self.value(a), &shape);
        self.push(out, Op::SumAxes(a))
    }

    pub fn mean_axes(&mut self, a: Var, axes: &[usize]) -> Var {
        let count: usize = axes.iter().map(|&ax| self.shape(a)[ax]).product();
        let s = self.sum_axes(a, axes);
        self.mul_scalar(s, 1.0 / count as f64)
    }

    /// Sum of all elements as a `[1]` tensor.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let axes: Vec<usize> = (0..self.shape(a).len()).collect();
        let s = self.sum_axes(a, &axes);
        self.reshape(s, &[1])
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).numel();
        let s = self.sum_all(a);
        self.mul_scalar(s, 1.0 / n as f64)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let out = self.value(a).clone().reshape(shape.to_vec());
        self.push(out, Op::Reshape(a))
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Var {
        let out = permute(self.value(a), perm);
        self.push(out, Op::Permute(a, perm.to_vec()))
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&mut self, a: Var) -> Var {
        let r = self.shape(a).len();
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(a, &perm)
    }

    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Var {
        let out = narrow(self.value(a), axis, start, len);
        self.push(
            out,
            Op::Narrow {
                input: a,
                axis,
                start,
            },
        )
    }

    pub fn concat(&mut self, vars: &[Var], axis: usize) -> Var {
        let values: Vec<&Tensor> = vars.iter().map(|v| self.value(*v)).collect();
        let out = concat(&values, axis);
        self.push(out, Op::Concat(vars.to_vec(), axis))
    }

    // ---- backward ------------------------------------------------------

    /// Back-propagates from a scalar-shaped `root` (seeded with 1).
    pub fn backward(&self, root: Var) -> Gradients {
        let seed = Tensor::full(self.shape(root).to_vec(), 1.0);
        self.backward_with(root, seed)
    }

    /// Back-propagates an explicit upstream gradient from `root`.
    pub fn backward_with(&self, root: Var, seed: Tensor) -> Gradients {
        assert_eq!(seed.shape(), self.shape(root));
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                if node.needs_grad {
                    grads[i] = Some(g);
                }
                continue;
            }
            if node.needs_grad {
                self.backward_node(i, &g, &mut grads);
            }
        }
        Gradients { grads }
    }

    pub(crate) fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        debug_assert_eq!(g.shape(), self.shape(v));
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn backward_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, sum_to_shape(g, self.shape(*a)));
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, sum_to_shape(g, self.shape(*b)));
                }
            }
            Op::Sub(a, b) => {
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, sum_to_shape(g, self.shape(*a)));
                }
                if self.requires_grad(*b) {
                    let gb = sum_to_shape(g, self.shape(*b)).map(|x| -x);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    let full = broadcast_binary(g, vb, |gg, y| gg * y);
                    self.accumulate(grads, *a, sum_to_shape(&full, va.shape()));
                }
                if self.requires_grad(*b) {
                    let full = broadcast_binary(g, va, |gg, x| gg * x);
                    self.accumulate(grads, *b, sum_to_shape(&full, vb.shape()));
                }
            }
            Op::Div(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    let full = broadcast_binary(g, vb, |gg, y| gg / y);
                    self.accumulate(grads, *a, sum_to_shape(&full, va.shape()));
                }
                if self.requires_grad(*b) {
                    // d(a/b)/db = -out / b
                    let t = broadcast_binary(g, out, |gg, o| gg * o);
                    let full = broadcast_binary(&t, vb, |x, y| -x / y);
                    self.accumulate(grads, *b, sum_to_shape(&full, vb.shape()));
                }
            }
            Op::Neg(a) => self.accumulate(grads, *a, g.map(|x| -x)),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::MulScalar(a, c) => {
                let c = *c;
                self.accumulate(grads, *a, g.map(|x| x * c))
            }
            Op::Exp(a) => self.accumulate(grads, *a, g.zip_map(out, |gg, o| gg * o)),
            Op::Ln(a) => {
                self.accumulate(grads, *a, g.zip_map(self.value(*a), |gg, x| gg / x))
            }
            Op::Abs(a) => self.accumulate(
                grads,
                *a,
                g.zip_map(self.value(*a), |gg, x| {
                    if x > 0.0 {
                        gg
                    } else if x < 0.0 {
                        -gg
                    } else {
                        0.0
                    }
                }),
            ),
            Op::Sqrt(a) => self.accumulate(grads, *a, g.zip_map(out, |gg, o| 0.5 * gg / o)),
            Op::Square(a) => {
                self.accumulate(grads, *a, g.zip_map(self.value(*a), |gg, x| 2.0 * gg * x))
            }
            Op::Relu(a) => self.accumulate(
                grads,
                *a,
                g.zip_map(self.value(*a), |gg, x| if x > 0.0 { gg } else { 0.0 }),
            ),
            Op::Elu(a) => self.accumulate(
                grads,
                *a,
                g.zip_map(out, |gg, o| if o > 0.0 { gg } else { gg * (o + 1.0) }),
            ),
            Op::Sigmoid(a) => {
                self.accumulate(grads, *a, g.zip_map(out, |gg, o| gg * o * (1.0 - o)))
            }
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                self.accumulate(
                    grads,
                    *a,
                    g.zip_map(self.value(*a), |gg, x| {
                        if x >= lo && x <= hi {
                            gg
                        } else {
                            0.0
                        }
                    }),
                )
            }
            Op::Minimum(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    let ga = Tensor::from_fn(va.shape().to_vec(), |k| {
                        if va.data()[k] <= vb.data()[k] {
                            g.data()[k]
                        } else {
                            0.0
                        }
                    });
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let gb = Tensor::from_fn(vb.shape().to_vec(), |k| {
                        if va.data()[k] <= vb.data()[k] {
                            0.0
                        } else {
                            g.data()[k]
                        }
                    });
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::SumAxes(a) => {
                let ga = broadcast_binary(&Tensor::zeros(self.shape(*a).to_vec()), g, |_, y| y);
                self.accumulate(grads, *a, ga);
            }
            Op::Reshape(a) => {
                self.accumulate(grads, *a, g.clone().reshape(self.shape(*a).to_vec()))
            }
            Op::Permute(a, perm) => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                self.accumulate(grads, *a, permute(g, &inv));
            }
            Op::Narrow { input, axis, start } => {
                let mut ga = Tensor::zeros(self.shape(*input).to_vec());
                scatter_narrow(&mut ga, g, *axis, *start);
                self.accumulate(grads, *input, ga);
            }
            Op::Concat(vars, axis) => {
                let mut offset = 0;
                for v in vars {
                    let len = self.shape(*v)[*axis];
                    if self.requires_grad(*v) {
                        self.accumulate(grads, *v, narrow(g, *axis, offset, len));
                    }
                    offset += len;
                }
            }
            Op::Conv2d { .. }
            | Op::ReflectPad(..)
            | Op::MaxPool { .. }
            | Op::AvgPool(..)
            | Op::UpsampleNearest(..)
            | Op::ResizeBilinear(..)
            | Op::BatchNorm { .. } => self.backward_spatial(i, g, grads),
            Op::GridSample { .. }
            | Op::Rodrigues(..)
            | Op::Bmm(..)
            | Op::Reproject { .. }
            | Op::PairwiseSqDist(..) => self.backward_geometric(i, g, grads),
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            panic!("cannot broadcast {a:?} with {b:?}");
        };
    }
    out
}

/// Strides of `shape` laid out against the (higher or equal rank) `out`
/// shape, with zero stride on broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        let oi = i + rank - shape.len();
        strides[oi] = if shape[i] == 1 && out[oi] != 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

fn for_each_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let total: usize = out.iter().product();
    if total == 0 {
        return;
    }
    let rank = out.len();
    let last = rank - 1;
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib, mut o) = (0usize, 0usize, 0usize);
    loop {
        let (mut a, mut b) = (ia, ib);
        for _ in 0..out[last] {
            f(o, a, b);
            o += 1;
            a += sa[last];
            b += sb[last];
        }
        let mut d = last;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

pub(crate) fn broadcast_binary(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let out_shape = broadcast_shape(a.shape(), b.shape());
    let sa = broadcast_strides(a.shape(), &out_shape);
    let sb = broadcast_strides(b.shape(), &out_shape);
    let mut out = Tensor::zeros(out_shape.clone());
    let (da, db) = (a.data(), b.data());
    let od = out.data_mut();
    for_each_broadcast(&out_shape, &sa, &sb, |o, ia, ib| od[o] = f(da[ia], db[ib]));
    out
}

/// Sums `g` down to `shape` (the inverse of broadcasting).
pub(crate) fn sum_to_shape(g: &Tensor, shape: &[usize]) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let out_shape = g.shape().to_vec();
    let st = broadcast_strides(shape, &out_shape);
    let sg = broadcast_strides(&out_shape, &out_shape);
    let mut out = Tensor::zeros(shape.to_vec());
    let gd = g.data();
    let od = out.data_mut();
    for_each_broadcast(&out_shape, &st, &sg, |_, it, ig| od[it] += gd[ig]);
    out
}

fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

pub(crate) fn permute(t: &Tensor, perm: &[usize]) -> Tensor {
    let in_shape = t.shape();
    assert_eq!(perm.len(), in_shape.len());
    let in_strides = contiguous_strides(in_shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let ones = vec![0; out_shape.len()];
    let mut out = Tensor::zeros(out_shape.clone());
    let td = t.data();
    let od = out.data_mut();
    for_each_broadcast(&out_shape, &src_strides, &ones, |o, i, _| od[o] = td[i]);
    out
}

fn narrow(t: &Tensor, axis: usize, start: usize, len: usize) -> Tensor {
    let shape = t.shape();
    assert!(start + len <= shape[axis], "narrow out of range");
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out_shape = shape.to_vec();
    out_shape[axis] = len;
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * shape[axis] + start) * inner;
        data.extend_from_slice(&t.data()[base..base + len * inner]);
    }
    Tensor::new(out_shape, data)
}

fn scatter_narrow(dst: &mut Tensor, src: &Tensor, axis: usize, start: usize) {
    let shape = dst.shape().to_vec();
    let len = src.shape()[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    for o in 0..outer {
        let base = (o * shape[axis] + start) * inner;
        let sbase = o * len * inner;
        for k in 0..len * inner {
            dst.data_mut()[base + k] += src.data()[sbase + k];
        }
    }
}

fn concat(values: &[&Tensor], axis: usize) -> Tensor {
    let first = values[0].shape();
    let outer: usize = first[..axis].iter().product();
    let inner: usize = first[axis + 1..].iter().product();
    let total_axis: usize = values.iter().map(|t| t.shape()[axis]).sum();
    for t in values {
        assert_eq!(t.shape().len(), first.len());
        for (d, (&x, &y)) in t.shape().iter().zip(first).enumerate() {
            assert!(d == axis || x == y, "concat shape mismatch");
        }
    }
    let mut out_shape = first.to_vec();
    out_shape[axis] = total_axis;
    let mut data = Vec::with_capacity(outer * total_axis * inner);
    for o in 0..outer {
        for t in values {
            let len = t.shape()[axis] * inner;
            data.extend_from_slice(&t.data()[o * len..(o + 1) * len]);
        }
    }
    Tensor::new(out_shape, data)
}
