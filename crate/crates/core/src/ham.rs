//! Global attention with Gaussian-kernel similarities between key and query
//! channel vectors, added back to the input through a learnable scale.
//!
//! The similarity matrix is `P×P` for `P = H·W` positions, so the module is
//! meant for coarse maps; [`MAX_POSITIONS`] bounds what it accepts.

use crate::autograd::{Graph, Tensor, Var};
use crate::error::{invalid, shape_err, Result};
use crate::networks::layers::{ConvBn, ConvSpec, Init, ParamBuilder, ParamId, ParamKind, Session};

pub const DEFAULT_DELTA: f64 = 0.5;

/// Largest accepted `H·W`; the similarity matrix grows quadratically.
pub const MAX_POSITIONS: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct HamParams {
    pub conv_k: ConvBn,
    pub conv_q: ConvBn,
    pub conv_v: ConvBn,
    pub beta: ParamId,
    pub delta: f64,
}

impl HamParams {
    pub fn build(b: &mut ParamBuilder, name: &str, channels: usize, delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(invalid(format!("kernel bandwidth must be positive, got {delta}")));
        }
        let spec = ConvSpec::new(channels, channels, 3).init(Init::KaimingFanOut);
        Ok(b.scoped(name, |b| HamParams {
            conv_k: ConvBn::build(b, "key", spec, true),
            conv_q: ConvBn::build(b, "query", spec, true),
            conv_v: ConvBn::build(b, "value", spec, true),
            beta: b.tensor("beta", ParamKind::Scalar, Tensor::new(vec![1], vec![0.0])),
            delta,
        }))
    }
}

/// `exp(−‖k_i − q_j‖² / 2δ²)` for column vectors of `k`, `q` (`N×C×P`),
/// giving `N×P×P`.
pub fn similarity_graph(g: &mut Graph, k: Var, q: Var, delta: f64) -> Var {
    let d = g.pairwise_sq_dist(k, q);
    let scaled = g.mul_scalar(d, -1.0 / (2.0 * delta * delta));
    g.exp(scaled)
}

/// Similarity matrix of two `C×H×W` feature maps, returned as `P×P`.
pub fn gaussian_similarity(k: &Tensor, q: &Tensor, delta: f64) -> Result<Tensor> {
    if k.rank() != 3 || k.shape() != q.shape() {
        return Err(shape_err(format!("key {:?} and query {:?}", k.shape(), q.shape())));
    }
    if !(delta > 0.0) {
        return Err(invalid("kernel bandwidth must be positive"));
    }
    let (c, p) = (k.dim(0), k.dim(1) * k.dim(2));
    let mut g = Graph::new();
    let kv = g.constant(k.clone().reshape(vec![1, c, p]));
    let qv = g.constant(q.clone().reshape(vec![1, c, p]));
    let s = similarity_graph(&mut g, kv, qv, delta);
    Ok(g.value(s).clone().reshape(vec![p, p]))
}

/// `x + β · Σ_j s(i, j) v_j` over positions, for `x` of shape `N×C×H×W`.
pub fn ham_forward(s: &mut Session<'_>, x: Var, p: &HamParams) -> Result<Var> {
    let (n, c, h, w) = s.g.value(x).dims4();
    let positions = h * w;
    if positions > MAX_POSITIONS {
        return Err(shape_err(format!("{positions} positions exceed the attention limit {MAX_POSITIONS}")));
    }
    let key = p.conv_k.forward(s, x);
    let query = p.conv_q.forward(s, x);
    let value = p.conv_v.forward(s, x);
    let key = s.g.reshape(key, &[n, c, positions]);
    let query = s.g.reshape(query, &[n, c, positions]);
    let value = s.g.reshape(value, &[n, c, positions]);
    let sim = similarity_graph(&mut s.g, key, query, p.delta);
    let sim_t = s.g.transpose_last(sim);
    let attended = s.g.bmm(value, sim_t);
    let attended = s.g.reshape(attended, &[n, c, h, w]);
    let beta = s.param(p.beta);
    let scaled = s.g.mul(attended, beta);
    Ok(s.g.add(scaled, x))
}

/// `e_m(θ) = θ^m e^{−θ²/2δ²} / (δ^m √m!)` for `m = 0..=order`.
fn feature_components(theta: f64, delta: f64, order: usize) -> Vec<f64> {
    let envelope = (-theta * theta / (2.0 * delta * delta)).exp();
    let ratio = theta / delta;
    let mut out = Vec::with_capacity(order + 1);
    let mut term = envelope;
    out.push(term);
    for m in 1..=order {
        term *= ratio / (m as f64).sqrt();
        out.push(term);
    }
    out
}

/// Truncated feature-map inner product approximating the Gaussian kernel:
/// per channel `Σ_{m≤order} e_m(a)·e_m(b)`, multiplied over channels.
///
/// The series is expanded about the midpoint of each channel pair. The
/// kernel only depends on `a − b`, and centring keeps the truncation error
/// governed by that difference rather than by the magnitudes.
pub fn taylor_kernel(a: &[f64], b: &[f64], delta: f64, order: usize) -> f64 {
    assert_eq!(a.len(), b.len(), "vectors must have equal length");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let mid = 0.5 * (x + y);
            let (x, y) = (x - mid, y - mid);
            feature_components(x, delta, order)
                .iter()
                .zip(feature_components(y, delta, order))
                .map(|(u, v)| u * v)
                .sum::<f64>()
        })
        .product()
}

pub fn gaussian_kernel(a: &[f64], b: &[f64], delta: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-d2 / (2.0 * delta * delta)).exp()
}
