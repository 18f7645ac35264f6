use std::collections::{HashMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, Graph, Tensor, Var};
use crate::error::{invalid, Result};

/// Momentum of the running normalization statistics.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamKind {
    ConvWeight,
    ConvBias,
    NormScale,
    NormShift,
    Scalar,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    pub fn is_buffer(self) -> bool {
        matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor,
}

/// Named parameters and normalization buffers in creation order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn add(&mut self, name: String, kind: ParamKind, value: Tensor) -> ParamId {
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry { name, kind, value });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn entries(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    /// Ids whose names start with `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.entries().filter(|(_, e)| e.name.starts_with(prefix)).map(|(id, _)| id).collect()
    }

    pub fn total_trainable(&self) -> usize {
        self.entries.iter().filter(|e| !e.kind.is_buffer()).map(|e| e.value.numel()).sum()
    }

    /// Overwrites values by name; shapes must match.
    pub fn load_values(&mut self, values: &[(String, Tensor)]) -> Result<()> {
        for (name, t) in values {
            let id = self.id(name).ok_or_else(|| invalid(format!("unknown parameter {name}")))?;
            if self.value(id).shape() != t.shape() {
                return Err(invalid(format!(
                    "parameter {name}: shape {:?} vs stored {:?}",
                    t.shape(),
                    self.value(id).shape()
                )));
            }
            *self.value_mut(id) = t.clone();
        }
        Ok(())
    }

    pub fn apply_norm_updates(&mut self, updates: &[NormUpdate]) {
        for u in updates {
            for (id, batch) in [(u.mean, &u.batch_mean), (u.var, &u.batch_var)] {
                for (r, b) in self.value_mut(id).data_mut().iter_mut().zip(batch) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
                }
            }
        }
    }
}

/// Creates parameters with hierarchical names from one seeded stream.
pub struct ParamBuilder {
    pub store: ParamStore,
    rng: ChaCha8Rng,
    scope: Vec<String>,
}

impl ParamBuilder {
    pub fn new(seed: u64) -> Self {
        Self { store: ParamStore::default(), rng: ChaCha8Rng::seed_from_u64(seed), scope: Vec::new() }
    }

    pub fn push(&mut self, name: &str) {
        self.scope.push(name.to_string());
    }

    pub fn pop(&mut self) {
        self.scope.pop();
    }

    pub fn scoped<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> T) -> T {
        self.push(name);
        let out = f(self);
        self.pop();
        out
    }

    fn full_name(&self, leaf: &str) -> String {
        let mut parts = self.scope.clone();
        parts.push(leaf.to_string());
        parts.join(".")
    }

    pub fn tensor(&mut self, leaf: &str, kind: ParamKind, value: Tensor) -> ParamId {
        let name = self.full_name(leaf);
        self.store.add(name, kind, value)
    }

    pub fn normal(&mut self, shape: Vec<usize>, std: f64) -> Tensor {
        let dist = Normal::new(0.0, std).expect("valid std");
        Tensor::from_fn(shape, |_| dist.sample(&mut self.rng))
    }

    pub fn uniform(&mut self, shape: Vec<usize>, bound: f64) -> Tensor {
        if bound == 0.0 {
            return Tensor::zeros(shape);
        }
        let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
        Tensor::from_fn(shape, |_| dist.sample(&mut self.rng))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch statistics observed in training mode, folded into the running
/// buffers once the step completes.
#[derive(Clone, Debug, PartialEq)]
pub struct NormUpdate {
    pub mean: ParamId,
    pub var: ParamId,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

/// One forward/backward pass: binds stored parameters to graph leaves.
pub struct Session<'a> {
    pub g: Graph,
    store: &'a ParamStore,
    mode: Mode,
    frozen: HashSet<ParamId>,
    bound: Vec<Option<Var>>,
    norm_updates: Vec<NormUpdate>,
}

impl<'a> Session<'a> {
    pub fn new(store: &'a ParamStore, mode: Mode) -> Self {
        Self {
            g: Graph::new(),
            store,
            mode,
            frozen: HashSet::new(),
            bound: vec![None; store.len()],
            norm_updates: Vec::new(),
        }
    }

    pub fn with_frozen(mut self, frozen: impl IntoIterator<Item = ParamId>) -> Self {
        self.frozen.extend(frozen);
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let e = self.store.entry(id);
        let v = if e.kind.is_buffer() || self.frozen.contains(&id) {
            self.g.constant(e.value.clone())
        } else {
            self.g.param(e.value.clone())
        };
        self.bound[id.0] = Some(v);
        v
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.g.constant(t)
    }

    pub fn record_norm(&mut self, update: NormUpdate) {
        self.norm_updates.push(update);
    }

    pub fn take_norm_updates(&mut self) -> Vec<NormUpdate> {
        std::mem::take(&mut self.norm_updates)
    }

    /// Gradients of every parameter that took part in the pass.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<(ParamId, Tensor)> {
        self.bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let v = (*v)?;
                if !self.g.requires_grad(v) {
                    return None;
                }
                let g = grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(self.g.shape(v).to_vec()));
                Some((ParamId(i), g))
            })
            .collect()
    }
}

/// Weight initialization schemes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Normal with std `sqrt(2 / fan_out)`.
    KaimingFanOut,
    /// Uniform in `±1/sqrt(fan_in)` for weights and bias.
    FanInUniform,
    /// Normal with the given std; bias zero.
    Normal(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
    /// Pads by reflection instead of zeros.
    pub reflect: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub bias: bool,
    pub reflect: bool,
    pub init: Init,
}

impl ConvSpec {
    pub fn new(c_in: usize, c_out: usize, kernel: usize) -> Self {
        Self { c_in, c_out, kernel, stride: 1, bias: true, reflect: false, init: Init::FanInUniform }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn no_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn reflect(mut self) -> Self {
        self.reflect = true;
        self
    }

    pub fn init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }
}

impl Conv2d {
    pub fn build(b: &mut ParamBuilder, name: &str, spec: ConvSpec) -> Self {
        b.scoped(name, |b| {
            let shape = vec![spec.c_out, spec.c_in, spec.kernel, spec.kernel];
            let fan_in = (spec.c_in * spec.kernel * spec.kernel) as f64;
            let fan_out = (spec.c_out * spec.kernel * spec.kernel) as f64;
            let (w, bias_bound) = match spec.init {
                Init::KaimingFanOut => (b.normal(shape, (2.0 / fan_out).sqrt()), 0.0),
                Init::FanInUniform => {
                    let bound = 1.0 / fan_in.sqrt();
                    (b.uniform(shape, bound), bound)
                }
                Init::Normal(std) => (b.normal(shape, std), 0.0),
            };
            let weight = b.tensor("weight", ParamKind::ConvWeight, w);
            let bias = spec.bias.then(|| {
                let t = b.uniform(vec![spec.c_out], bias_bound);
                b.tensor("bias", ParamKind::ConvBias, t)
            });
            Conv2d { weight, bias, stride: spec.stride, pad: spec.kernel / 2, reflect: spec.reflect }
        })
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Var {
        let w = s.param(self.weight);
        let b = self.bias.map(|id| s.param(id));
        if self.reflect && self.pad > 0 {
            let padded = s.g.reflect_pad(x, self.pad);
            s.g.conv2d(padded, w, b, self.stride, 0)
        } else {
            s.g.conv2d(x, w, b, self.stride, self.pad)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn build(b: &mut ParamBuilder, name: &str, channels: usize) -> Self {
        b.scoped(name, |b| BatchNorm {
            gamma: b.tensor("weight", ParamKind::NormScale, Tensor::full(vec![channels], 1.0)),
            beta: b.tensor("bias", ParamKind::NormShift, Tensor::zeros(vec![channels])),
            running_mean: b.tensor("running_mean", ParamKind::RunningMean, Tensor::zeros(vec![channels])),
            running_var: b.tensor("running_var", ParamKind::RunningVar, Tensor::full(vec![channels], 1.0)),
        })
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Var {
        let gamma = s.param(self.gamma);
        let beta = s.param(self.beta);
        match s.mode() {
            Mode::Train => {
                let (y, batch_mean, batch_var) = s.g.batch_norm_train(x, gamma, beta);
                s.record_norm(NormUpdate { mean: self.running_mean, var: self.running_var, batch_mean, batch_var });
                y
            }
            Mode::Eval => {
                let mean = s.store().value(self.running_mean).data().to_vec();
                let var = s.store().value(self.running_var).data().to_vec();
                s.g.batch_norm_eval(x, gamma, beta, &mean, &var)
            }
        }
    }
}

/// Convolution, batch normalization and an optional ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBn {
    pub conv: Conv2d,
    pub bn: BatchNorm,
    pub relu: bool,
}

impl ConvBn {
    pub fn build(b: &mut ParamBuilder, name: &str, spec: ConvSpec, relu: bool) -> Self {
        b.scoped(name, |b| ConvBn {
            conv: Conv2d::build(b, "conv", spec.no_bias()),
            bn: BatchNorm::build(b, "bn", spec.c_out),
            relu,
        })
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Var {
        let y = self.conv.forward(s, x);
        let y = self.bn.forward(s, y);
        if self.relu { s.g.relu(y) } else { y }
    }
}
