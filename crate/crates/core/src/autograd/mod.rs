//! A small reverse-mode automatic differentiation engine over `f64` tensors.
//!
//! Operations are recorded on a [`Graph`] as they execute. Leaves created
//! with [`Graph::param`] receive gradients; [`Graph::constant`] leaves do not.
//! All kernels are single-threaded and iterate in a fixed order, so results
//! are bit-reproducible run to run.

mod geometric;
mod graph;
mod spatial;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;

pub(crate) use geometric::rodrigues;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Settings for a central finite-difference gradient comparison.
#[derive(Clone, Debug)]
pub struct FiniteDiffOptions {
    pub step: f64,
    /// Gradients smaller than this are compared in absolute terms.
    pub floor: f64,
    /// Upper bound on checked coordinates per input; `None` checks all.
    pub max_coords: Option<usize>,
    pub seed: u64,
    /// Relative gap between forward and backward one-sided differences above
    /// which a coordinate counts as non-smooth.
    pub kink_tolerance: f64,
}

impl Default for FiniteDiffOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
            max_coords: None,
            seed: 0,
            kink_tolerance: 1e-4,
        }
    }
}

/// Outcome of a finite-difference comparison for one input tensor.
#[derive(Clone, Debug)]
pub struct FiniteDiffEntry {
    pub input: usize,
    pub coords_checked: usize,
    pub max_rel_error: f64,
    pub max_abs_grad: f64,
    /// Coordinates where the function has a kink or jump within one step.
    pub nonsmooth_coords: usize,
}

#[derive(Clone, Debug)]
pub struct FiniteDiffReport {
    pub entries: Vec<FiniteDiffEntry>,
}

impl FiniteDiffReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.max_rel_error))
    }

    pub fn nonsmooth_coords(&self) -> usize {
        self.entries.iter().map(|e| e.nonsmooth_coords).sum()
    }
}

/// Central difference of `f` at `step`, where `f(δ)` evaluates the function
/// at `x + δ`. Also reports whether the estimate at half the step disagrees
/// by more than `tol` relative to its size: for smooth functions the two
/// agree to `O(step²)`, while a kink or jump inside `[x−step, x+step]`
/// separates them.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, step: f64, floor: f64, tol: f64) -> (f64, bool) {
    let full = (f(step) - f(-step)) / (2.0 * step);
    let half = (f(0.5 * step) - f(-0.5 * step)) / step;
    let scale = full.abs().max(half.abs()).max(floor);
    (full, (full - half).abs() > tol * scale)
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares reverse-mode gradients of the scalar function `f` against
/// central differences. `f` receives the graph and one leaf per input and
/// must return a single-element node. Only inputs whose `differentiable`
/// flag is set are checked; the others are passed as constants.
pub fn check_gradients<F>(
    f: F,
    inputs: &[Tensor],
    differentiable: &[bool],
    opts: &FiniteDiffOptions,
) -> FiniteDiffReport
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    assert_eq!(inputs.len(), differentiable.len());
    let eval = |values: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars);
        assert_eq!(g.value(out).numel(), 1, "objective must be scalar");
        g.value(out).item()
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .zip(differentiable)
        .map(|(t, &d)| if d { g.param(t.clone()) } else { g.constant(t.clone()) })
        .collect();
    let out = f(&mut g, &vars);
    let grads = g.backward(out);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut entries = Vec::new();
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (idx, var) in vars.iter().enumerate() {
        if !differentiable[idx] {
            continue;
        }
        let numel = inputs[idx].numel();
        let analytic = grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[idx].shape().to_vec()));
        let coords: Vec<usize> = match opts.max_coords {
            Some(m) if m < numel => {
                let mut c = sample(&mut rng, numel, m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..numel).collect(),
        };
        let mut max_rel: f64 = 0.0;
        let mut nonsmooth = 0;
        for &k in &coords {
            let orig = work[idx].data()[k];
            let (numeric, kink) = central_difference(
                |delta| {
                    work[idx].data_mut()[k] = orig + delta;
                    eval(&work)
                },
                opts.step,
                opts.floor,
                opts.kink_tolerance,
            );
            work[idx].data_mut()[k] = orig;
            nonsmooth += usize::from(kink);
            max_rel = max_rel.max(relative_error(analytic.data()[k], numeric, opts.floor));
        }
        entries.push(FiniteDiffEntry {
            input: idx,
            coords_checked: coords.len(),
            max_rel_error: max_rel,
            max_abs_grad: analytic.max_abs(),
            nonsmooth_coords: nonsmooth,
        });
    }
    FiniteDiffReport { entries }
}

#[cfg(test)]
mod tests;
