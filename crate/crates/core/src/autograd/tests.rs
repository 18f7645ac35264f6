use super::*;
use rand::Rng;

fn rand_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

/// Contracts `out` with fixed random weights so any op becomes a scalar.
fn project(g: &mut Graph, out: Var, seed: u64) -> Var {
    let w = rand_tensor(g.shape(out), seed ^ 0xabc, -1.0, 1.0);
    let wv = g.constant(w);
    let p = g.mul(out, wv);
    g.sum_all(p)
}

fn assert_grads<F>(f: F, inputs: &[Tensor], tol: f64)
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let diff = vec![true; inputs.len()];
    let report = check_gradients(f, inputs, &diff, &FiniteDiffOptions::default());
    for e in &report.entries {
        assert!(e.max_rel_error < tol, "input {} rel err {}", e.input, e.max_rel_error);
        assert!(e.max_abs_grad > 0.0, "input {} has an all-zero gradient", e.input);
    }
}

#[test]
fn elementwise_ops_match_finite_differences() {
    let a = rand_tensor(&[2, 3, 4], 1, 0.2, 1.5);
    let b = rand_tensor(&[2, 3, 4], 2, 0.2, 1.5);
    assert_grads(
        |g, v| {
            let s = g.add(v[0], v[1]);
            let m = g.mul(s, v[0]);
            let d = g.div(m, v[1]);
            let e = g.exp(d);
            let l = g.ln(e);
            let q = g.sqrt(l);
            let sg = g.sigmoid(q);
            let sub = g.sub(sg, v[1]);
            let el = g.elu(sub);
            let sq = g.square(el);
            project(g, sq, 3)
        },
        &[a, b],
        1e-6,
    );
}

#[test]
fn broadcasting_binary_ops_reduce_gradients() {
    let a = rand_tensor(&[2, 3, 4, 5], 4, -1.0, 1.0);
    let b = rand_tensor(&[2, 1, 4, 1], 5, 0.5, 1.5);
    let c = rand_tensor(&[1], 6, 0.5, 1.5);
    assert_grads(
        |g, v| {
            let x = g.mul(v[0], v[1]);
            let y = g.div(x, v[2]);
            let z = g.sub(y, v[1]);
            let w = g.add(z, v[2]);
            project(g, w, 7)
        },
        &[a, b, c],
        1e-6,
    );
}

#[test]
fn reductions_and_shape_ops() {
    let a = rand_tensor(&[2, 3, 4, 5], 8, -1.0, 1.0);
    let b = rand_tensor(&[2, 2, 4, 5], 9, -1.0, 1.0);
    assert_grads(
        |g, v| {
            let c = g.concat(&[v[0], v[1]], 1);
            let n = g.narrow(c, 1, 1, 3);
            let p = g.permute(n, &[0, 2, 3, 1]);
            let r = g.reshape(p, &[2, 20, 3]);
            let t = g.transpose_last(r);
            let s = g.mean_axes(t, &[1]);
            let sq = g.square(s);
            project(g, sq, 10)
        },
        &[a, b],
        1e-6,
    );
}

#[test]
fn conv2d_matches_finite_differences() {
    for (k, stride, pad) in [(3, 1, 1), (3, 2, 1), (1, 1, 0), (7, 2, 3)] {
        let x = rand_tensor(&[2, 3, 9, 8], 11, -1.0, 1.0);
        let w = rand_tensor(&[4, 3, k, k], 12, -0.5, 0.5);
        let b = rand_tensor(&[4], 13, -0.5, 0.5);
        assert_grads(
            |g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), stride, pad);
                project(g, y, 14)
            },
            &[x, w, b],
            1e-6,
        );
    }
}

#[test]
fn conv2d_matches_direct_loop() {
    let x = rand_tensor(&[1, 2, 5, 6], 15, -1.0, 1.0);
    let w = rand_tensor(&[3, 2, 3, 3], 16, -1.0, 1.0);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let wv = g.constant(w.clone());
    let y = g.conv2d(xv, wv, None, 2, 1);
    let (_, _, ho, wo) = g.value(y).dims4();
    for co in 0..3 {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut s = 0.0;
                for ci in 0..2 {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = (oy * 2 + ky) as isize - 1;
                            let ix = (ox * 2 + kx) as isize - 1;
                            if iy >= 0 && iy < 5 && ix >= 0 && ix < 6 {
                                s += x.at4(0, ci, iy as usize, ix as usize)
                                    * w.at4(co, ci, ky, kx);
                            }
                        }
                    }
                }
                assert!((g.value(y).at4(0, co, oy, ox) - s).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn pooling_padding_and_resampling() {
    let x = rand_tensor(&[2, 2, 6, 7], 17, -1.0, 1.0);
    assert_grads(
        |g, v| {
            let p = g.reflect_pad(v[0], 1);
            let a = g.avg_pool(p, 3);
            let m = g.max_pool(a, 3, 2, 1);
            let u = g.upsample_nearest(m, 2);
            let r = g.resize_bilinear(u, 11, 5);
            project(g, r, 18)
        },
        &[x],
        1e-6,
    );
}

#[test]
fn batch_norm_train_and_eval() {
    let x = rand_tensor(&[3, 4, 3, 3], 19, -1.0, 2.0);
    let gamma = rand_tensor(&[4], 20, 0.5, 1.5);
    let beta = rand_tensor(&[4], 21, -0.5, 0.5);
    assert_grads(
        |g, v| {
            let (y, _, _) = g.batch_norm_train(v[0], v[1], v[2]);
            let sq = g.square(y);
            project(g, sq, 22)
        },
        &[x.clone(), gamma.clone(), beta.clone()],
        1e-5,
    );
    assert_grads(
        |g, v| {
            let y = g.batch_norm_eval(v[0], v[1], v[2], &[0.1, 0.2, 0.3, 0.4], &[1.0, 2.0, 0.5, 0.3]);
            let sq = g.square(y);
            project(g, sq, 23)
        },
        &[x, gamma, beta],
        1e-5,
    );
}

#[test]
fn grid_sample_gradients_wrt_image_and_grid() {
    let img = rand_tensor(&[2, 3, 5, 6], 24, 0.0, 1.0);
    // keep coordinates away from integer kinks and the clamp boundary
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let grid = Tensor::from_fn(vec![2, 4, 4, 2], |k| {
        let base = if k % 2 == 0 { rng.random_range(0..5) } else { rng.random_range(0..4) };
        base as f64 + rng.random_range(0.1..0.9)
    });
    assert_grads(
        |g, v| {
            let s = g.grid_sample(v[0], v[1]);
            project(g, s, 26)
        },
        &[img, grid],
        1e-6,
    );
}

#[test]
fn rodrigues_gradients_large_and_small_angles() {
    for (seed, scale) in [(27u64, 1.0), (28, 1e-3), (29, 2.5)] {
        let v = rand_tensor(&[3, 3], seed, -scale, scale);
        assert_grads(
            |g, vars| {
                let r = g.rodrigues(vars[0]);
                project(g, r, 30)
            },
            &[v],
            1e-6,
        );
    }
}

#[test]
fn bmm_and_pairwise_distance() {
    let a = rand_tensor(&[2, 3, 4], 31, -1.0, 1.0);
    let b = rand_tensor(&[2, 4, 5], 32, -1.0, 1.0);
    let c = rand_tensor(&[2, 3, 5], 33, -1.0, 1.0);
    assert_grads(
        |g, v| {
            let m = g.bmm(v[0], v[1]);
            let d = g.pairwise_sq_dist(v[0], v[2]);
            let s1 = project(g, m, 34);
            let s2 = project(g, d, 35);
            g.add(s1, s2)
        },
        &[a, b, c],
        1e-6,
    );
}

#[test]
fn reproject_gradients() {
    let depth = rand_tensor(&[2, 1, 5, 6], 36, 2.0, 4.0);
    let rot = rand_tensor(&[2, 3], 37, -0.05, 0.05);
    let trans = rand_tensor(&[2, 3], 38, -0.2, 0.2);
    let k = vec![[5.0, 5.5, 2.5, 2.0], [4.0, 4.0, 3.0, 2.5]];
    assert_grads(
        |g, v| {
            let r = g.rodrigues(v[1]);
            let (grid, _) = g.reproject(v[0], r, v[2], &k);
            project(g, grid, 39)
        },
        &[depth, rot, trans],
        1e-6,
    );
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::new();
    let a = g.param(Tensor::scalar(2.0));
    let c = g.constant(Tensor::scalar(3.0));
    let y = g.mul(a, c);
    let grads = g.backward(y);
    assert_eq!(grads.get(a).unwrap().item(), 3.0);
    assert!(grads.get(c).is_none());
}

#[test]
fn minimum_routes_gradient_to_smaller_input() {
    let mut g = Graph::new();
    let a = g.param(Tensor::new(vec![3], vec![1.0, 5.0, 2.0]));
    let b = g.param(Tensor::new(vec![3], vec![2.0, 1.0, 2.0]));
    let m = g.minimum(a, b);
    let s = g.sum_all(m);
    let grads = g.backward(s);
    assert_eq!(grads.get(a).unwrap().data(), &[1.0, 0.0, 1.0]);
    assert_eq!(grads.get(b).unwrap().data(), &[0.0, 1.0, 0.0]);
}
