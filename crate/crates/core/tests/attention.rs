use depthcue::autograd::Tensor;
use depthcue::ham::{gaussian_kernel, gaussian_similarity, ham_forward, taylor_kernel, HamParams, MAX_POSITIONS};
use depthcue::networks::layers::{Mode, ParamBuilder, ParamKind, ParamStore, Session};
use proptest::prelude::*;

fn feature_map(c: usize, h: usize, w: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-2.0..2.0f64, c * h * w).prop_map(move |v| Tensor::new(vec![c, h, w], v))
}

/// Attention parameters whose 3×3 convolutions only use the centre tap, with
/// a non-zero scale.
fn pointwise_attention(channels: usize, beta: f64) -> (HamParams, ParamStore) {
    let mut b = ParamBuilder::new(21);
    let params = HamParams::build(&mut b, "ham", channels, 1.5).unwrap();
    let mut store = b.store;
    let ids: Vec<_> = store.entries().filter(|(_, e)| e.kind == ParamKind::ConvWeight).map(|(id, _)| id).collect();
    for id in ids {
        let v = store.value_mut(id);
        let shape = v.shape().to_vec();
        let (kh, kw) = (shape[2], shape[3]);
        for (i, x) in v.data_mut().iter_mut().enumerate() {
            let tap = i % (kh * kw);
            if tap != (kh / 2) * kw + kw / 2 {
                *x = 0.0;
            }
        }
    }
    store.value_mut(params.beta).data_mut()[0] = beta;
    (params, store)
}

fn run(params: &HamParams, store: &ParamStore, x: &Tensor) -> Tensor {
    let mut s = Session::new(store, Mode::Eval);
    let v = s.input(x.clone());
    let y = ham_forward(&mut s, v, params).unwrap();
    s.g.value(y).clone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn similarities_lie_in_unit_interval(k in feature_map(3, 3, 4), q in feature_map(3, 3, 4), delta in 0.1..3.0f64) {
        let s = gaussian_similarity(&k, &q, delta).unwrap();
        prop_assert_eq!(s.shape(), &[12, 12]);
        for v in s.data() {
            prop_assert!(*v > 0.0 || *v == 0.0 && delta < 0.2);
            prop_assert!(*v <= 1.0);
        }
    }

    #[test]
    fn self_similarity_is_symmetric_with_unit_diagonal(k in feature_map(4, 2, 3), delta in 0.3..3.0f64) {
        let s = gaussian_similarity(&k, &k, delta).unwrap();
        for i in 0..6 {
            prop_assert_eq!(s.data()[i * 6 + i], 1.0);
            for j in 0..6 {
                prop_assert_eq!(s.data()[i * 6 + j], s.data()[j * 6 + i]);
            }
        }
    }

    #[test]
    fn series_matches_kernel_within_two_bandwidths(
        a in prop::collection::vec(-5.0..5.0f64, 1..6),
        dir in prop::collection::vec(-1.0..1.0f64, 6),
        frac in 0.0..=1.0f64,
        delta in 0.2..2.0f64,
    ) {
        let norm = dir[..a.len()].iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
        let b: Vec<f64> = a.iter().zip(&dir).map(|(x, d)| x + 2.0 * delta * frac * d / norm).collect();
        let err = (taylor_kernel(&a, &b, delta, 12) - gaussian_kernel(&a, &b, delta)).abs();
        prop_assert!(err < 1e-6, "error {err}");
    }

    #[test]
    fn zero_scale_is_the_identity(x in prop::collection::vec(-3.0..3.0f64, 2 * 3 * 4 * 4)) {
        let mut b = ParamBuilder::new(2);
        let params = HamParams::build(&mut b, "ham", 3, 0.5).unwrap();
        let x = Tensor::new(vec![2, 3, 4, 4], x);
        for mode in [Mode::Train, Mode::Eval] {
            let mut s = Session::new(&b.store, mode);
            let v = s.input(x.clone());
            let y = ham_forward(&mut s, v, &params).unwrap();
            prop_assert!(s.g.value(y).data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn permuting_positions_permutes_the_output(
        x in prop::collection::vec(-1.0..1.0f64, 2 * 3 * 3),
        perm in Just((0..9).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let (params, store) = pointwise_attention(2, 0.7);
        let x = Tensor::new(vec![1, 2, 3, 3], x);
        let permuted = Tensor::from_fn(vec![1, 2, 3, 3], |i| x.data()[(i / 9) * 9 + perm[i % 9]]);
        let y = run(&params, &store, &x);
        let y_perm = run(&params, &store, &permuted);
        for i in 0..18 {
            let expected = y.data()[(i / 9) * 9 + perm[i % 9]];
            prop_assert!((y_perm.data()[i] - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn series_error_shrinks_with_order() {
    let (a, b) = ([0.4, -0.1], [-0.3, 0.5]);
    let exact = gaussian_kernel(&a, &b, 0.5);
    let errs: Vec<f64> = [2, 4, 8, 12].iter().map(|&n| (taylor_kernel(&a, &b, 0.5, n) - exact).abs()).collect();
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    assert!(errs[3] < 1e-8);
}

#[test]
fn scale_is_created_at_zero() {
    let mut b = ParamBuilder::new(5);
    let params = HamParams::build(&mut b, "ham", 4, 0.5).unwrap();
    assert_eq!(b.store.value(params.beta).data(), &[0.0]);
    assert!(HamParams::build(&mut b, "bad", 4, 0.0).is_err());
}

#[test]
fn oversized_maps_are_rejected() {
    let (params, store) = pointwise_attention(1, 0.0);
    let side = (MAX_POSITIONS as f64).sqrt() as usize + 1;
    let mut s = Session::new(&store, Mode::Eval);
    let v = s.input(Tensor::zeros(vec![1, 1, side, side]));
    assert!(ham_forward(&mut s, v, &params).is_err());
}
