use std::collections::BTreeMap;

use crate::autograd::Tensor;
use crate::networks::layers::{ParamId, ParamKind, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamSettings {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 coefficient added to the gradient of convolution weights.
    pub weight_decay: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentPair {
    pub first: Tensor,
    pub second: Tensor,
}

/// Adam with bias correction; moments are created lazily per parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Adam {
    pub steps: u64,
    pub moments: BTreeMap<ParamId, MomentPair>,
}

impl Adam {
    pub fn step(&mut self, store: &mut ParamStore, grads: Vec<(ParamId, Tensor)>, lr: f64, s: &AdamSettings) {
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - s.beta1.powi(t);
        let c2 = 1.0 - s.beta2.powi(t);
        for (id, mut grad) in grads {
            if store.entry(id).kind == ParamKind::ConvWeight && s.weight_decay != 0.0 {
                let decay = s.weight_decay;
                grad = grad.zip_map(store.value(id), |g, w| g + decay * w);
            }
            let shape = grad.shape().to_vec();
            let m = self.moments.entry(id).or_insert_with(|| MomentPair {
                first: Tensor::zeros(shape.clone()),
                second: Tensor::zeros(shape),
            });
            let value = store.value_mut(id).data_mut();
            let first = m.first.data_mut();
            let second = m.second.data_mut();
            for (k, &g) in grad.data().iter().enumerate() {
                first[k] = s.beta1 * first[k] + (1.0 - s.beta1) * g;
                second[k] = s.beta2 * second[k] + (1.0 - s.beta2) * g * g;
                let m_hat = first[k] / c1;
                let v_hat = second[k] / c2;
                value[k] -= lr * m_hat / (v_hat.sqrt() + s.eps);
            }
        }
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [(ParamId, Tensor)], max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|(_, g)| g.data()).map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let f = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= f);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::default();
        let id = store.add("w".into(), ParamKind::Scalar, Tensor::new(vec![2], vec![1.0, -1.0]));
        let mut adam = Adam::default();
        let s = AdamSettings { beta1: 0.9, beta2: 0.999, eps: 0.0, weight_decay: 0.0 };
        adam.step(&mut store, vec![(id, Tensor::new(vec![2], vec![3.0, -0.5]))], 0.1, &s);
        let v = store.value(id).data();
        assert!((v[0] - 0.9).abs() < 1e-12);
        assert!((v[1] + 0.9).abs() < 1e-12);
    }

    #[test]
    fn decay_only_touches_conv_weights() {
        let mut store = ParamStore::default();
        let w = store.add("conv.weight".into(), ParamKind::ConvWeight, Tensor::new(vec![1], vec![2.0]));
        let b = store.add("bn.weight".into(), ParamKind::NormScale, Tensor::new(vec![1], vec![2.0]));
        let mut adam = Adam::default();
        let s = AdamSettings { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.5 };
        adam.step(&mut store, vec![(w, Tensor::zeros(vec![1])), (b, Tensor::zeros(vec![1]))], 0.1, &s);
        assert!(store.value(w).data()[0] < 2.0);
        assert_eq!(store.value(b).data()[0], 2.0);
    }
}
