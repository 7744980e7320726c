mod common;

use common::{away_from_zero, contract, conv_oracle, fd_inputs, uniform};
use proptest::prelude::*;
use wdffu_core::autograd::PoolKind;
use wdffu_core::{Error, ParamStore, Tape, Tensor, Var};

const TOL: f64 = 1e-4;
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, v.to_vec()).unwrap()
}

fn eval1(x: Tensor<f64>, f: impl Fn(&mut Tape<f64>, Var) -> Var) -> Tensor<f64> {
    let mut tape = Tape::<f64>::new();
    let v = tape.constant(x).unwrap();
    let y = f(&mut tape, v);
    tape.value(y).clone()
}

fn gradcheck_all_seeds(name: &str, f: impl Fn(u64) -> f64) {
    for s in SEEDS {
        let e = f(s);
        assert!(e < TOL, "{name} seed {s}: relative error {e:.3e}");
    }
}

#[test]
fn conv2d_scalar_product() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[1, 1, 1, 1], &[3.0])).unwrap();
    let w = tape.constant(t(&[1, 1, 1, 1], &[2.0])).unwrap();
    let y = tape.conv2d(x, w, None, 1, 0, 1).unwrap();
    assert_eq!(tape.value(y).data(), &[6.0]);
}

#[test]
fn conv2d_center_delta_is_identity() {
    let x = uniform(&[1, 1, 5, 6], -1.0, 1.0, 7);
    let mut k = vec![0.0; 9];
    k[4] = 1.0;
    let mut tape = Tape::<f64>::new();
    let xv = tape.constant(x.clone()).unwrap();
    let w = tape.constant(t(&[1, 1, 3, 3], &k)).unwrap();
    let y = tape.conv2d(xv, w, None, 1, 1, 1).unwrap();
    assert_eq!(tape.value(y), &x);
}

#[test]
fn conv2d_matches_loop_oracle() {
    for (seed, stride, pad, groups) in [(1, 1, 1, 1), (2, 2, 1, 1), (3, 1, 0, 2), (4, 2, 2, 2)] {
        let x = uniform(&[1, 2, 5, 5], -1.0, 1.0, seed);
        let w = uniform(&[4, 2 / groups, 3, 3], -1.0, 1.0, seed + 10);
        let b = uniform(&[4], -1.0, 1.0, seed + 20);
        let mut tape = Tape::<f64>::new();
        let (xv, wv, bv) = (
            tape.constant(x.clone()).unwrap(),
            tape.constant(w.clone()).unwrap(),
            tape.constant(b.clone()).unwrap(),
        );
        let y = tape.conv2d(xv, wv, Some(bv), stride, pad, groups).unwrap();
        let expect = conv_oracle(&x, &w, Some(&b), stride, pad, groups);
        assert_eq!(tape.value(y).shape(), expect.shape());
        assert!(tape.value(y).max_abs_diff(&expect) < 1e-12);
    }
}

#[test]
fn conv2d_rejects_bad_shapes() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[1, 3, 4, 4])).unwrap();
    let w = tape.constant(Tensor::zeros(&[2, 2, 3, 3])).unwrap();
    assert!(matches!(
        tape.conv2d(x, w, None, 1, 1, 1),
        Err(Error::Dimension(_))
    ));
    assert!(matches!(
        tape.conv2d(x, w, None, 1, 1, 2),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn checked_mode_rejects_non_finite() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[1, 1, 1, 1], &[1e300])).unwrap();
    let w = tape.constant(t(&[1, 1, 1, 1], &[1e300])).unwrap();
    assert!(matches!(
        tape.conv2d(x, w, None, 1, 0, 1),
        Err(Error::Numeric(_))
    ));
    assert!(matches!(
        tape.constant(t(&[1], &[f64::NAN])),
        Err(Error::Numeric(_))
    ));
}

#[test]
fn pooling_examples() {
    let c = Tensor::full(&[1, 2, 4, 4], 0.7);
    for kind in [
        PoolKind::Max,
        PoolKind::Avg,
        PoolKind::GlobalAvg,
        PoolKind::GlobalMax,
    ] {
        let y = eval1(c.clone(), |tp, v| tp.pool2d(v, kind, 2, 2).unwrap());
        assert!(
            y.data().iter().all(|&v| (v - 0.7).abs() < 1e-15),
            "{kind:?}"
        );
    }
    let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
    let gmax = eval1(x.clone(), |tp, v| {
        tp.pool2d(v, PoolKind::GlobalMax, 0, 0).unwrap()
    });
    let gavg = eval1(x, |tp, v| tp.pool2d(v, PoolKind::GlobalAvg, 0, 0).unwrap());
    assert_eq!(gmax.shape(), &[1, 1, 1, 1]);
    assert_eq!(gmax.data(), &[4.0]);
    assert_eq!(gavg.data(), &[2.5]);
}

#[test]
fn max_pool_matches_window_oracle() {
    let x = uniform(&[1, 4, 8, 8], -1.0, 1.0, 3);
    let y = eval1(x.clone(), |tp, v| {
        tp.pool2d(v, PoolKind::Max, 2, 2).unwrap()
    });
    for c in 0..4 {
        for i in 0..4 {
            for j in 0..4 {
                let mut m = f64::NEG_INFINITY;
                for a in 0..2 {
                    for b in 0..2 {
                        m = m.max(x.get(&[0, c, 2 * i + a, 2 * j + b]));
                    }
                }
                assert_eq!(y.get(&[0, c, i, j]), m);
            }
        }
    }
}

#[test]
fn pooling_rejects_indivisible_window() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[1, 1, 5, 5])).unwrap();
    assert!(matches!(
        tape.pool2d(x, PoolKind::Max, 2, 2),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn channel_reduce_gives_single_channel_maps() {
    let x = uniform(&[2, 3, 4, 5], -1.0, 1.0, 9);
    let mean = eval1(x.clone(), |tp, v| {
        tp.channel_reduce(v, PoolKind::Avg).unwrap()
    });
    let max = eval1(x.clone(), |tp, v| {
        tp.channel_reduce(v, PoolKind::Max).unwrap()
    });
    assert_eq!(mean.shape(), &[2, 1, 4, 5]);
    for (n, i, j) in [(0, 0, 0), (1, 3, 4), (1, 2, 1)] {
        let vals: Vec<f64> = (0..3).map(|c| x.get(&[n, c, i, j])).collect();
        assert!((mean.get(&[n, 0, i, j]) - vals.iter().sum::<f64>() / 3.0).abs() < 1e-15);
        assert_eq!(
            max.get(&[n, 0, i, j]),
            vals.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        );
    }
}

#[test]
fn pointwise_examples() {
    let s = eval1(t(&[1], &[0.0]), |tp, v| tp.sigmoid(v).unwrap());
    assert_eq!(s.data(), &[0.5]);
    let sm = eval1(t(&[3], &[0.0, 0.0, 0.0]), |tp, v| tp.softmax(v, 0).unwrap());
    assert!(sm.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    let sm = eval1(t(&[3], &[1.0, 2.0, 3.0]), |tp, v| tp.softmax(v, 0).unwrap());
    for (got, want) in
        sm.data()
            .iter()
            .zip([0.09003057317038046, 0.24472847105479764, 0.6652409557748219])
    {
        assert!((got - want).abs() < 1e-5);
    }
}

#[test]
fn log_rejects_non_positive_input() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[2], &[1.0, 0.0])).unwrap();
    assert!(matches!(tape.log(x), Err(Error::Numeric(_))));
}

#[test]
fn broadcasting_examples() {
    let x = uniform(&[1, 3, 4, 4], -1.0, 1.0, 2);
    let mut tape = Tape::<f64>::new();
    let xv = tape.constant(x.clone()).unwrap();
    let z = tape.constant(Tensor::zeros(&[1, 3, 4, 4])).unwrap();
    let half = tape.constant(Tensor::full(&[1, 1, 4, 4], 0.5)).unwrap();
    let s = tape.add(xv, z).unwrap();
    assert_eq!(tape.value(s), &x);
    let m = tape.mul(xv, half).unwrap();
    assert_eq!(tape.value(m), &x.map(|v| v * 0.5));
    let bad = tape.constant(Tensor::zeros(&[1, 2, 4, 4])).unwrap();
    assert!(matches!(tape.add(xv, bad), Err(Error::Dimension(_))));
}

#[test]
fn bilinear_upsample_examples() {
    let c = Tensor::full(&[1, 2, 3, 5], -1.25);
    let y = eval1(c, |tp, v| tp.upsample_bilinear(v, 2).unwrap());
    assert_eq!(y.shape(), &[1, 2, 6, 10]);
    assert!(y.data().iter().all(|&v| (v + 1.25).abs() < 1e-15));
    // Half-pixel centers: a 2-pixel ramp [0, 1] upsampled ×2 gives [0, .25, .75, 1].
    let r = eval1(t(&[1, 1, 1, 2], &[0.0, 1.0]), |tp, v| {
        tp.upsample_bilinear(v, 2).unwrap()
    });
    assert_eq!(r.shape(), &[1, 1, 2, 4]);
    assert_eq!(&r.data()[..4], &[0.0, 0.25, 0.75, 1.0]);
    assert_eq!(&r.data()[4..], &[0.0, 0.25, 0.75, 1.0]);
    let n = eval1(t(&[1, 1, 1, 2], &[0.0, 1.0]), |tp, v| {
        tp.upsample_nearest(v, 2).unwrap()
    });
    assert_eq!(n.data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
}

#[test]
fn layer_norm_normalizes_last_axis() {
    let x = uniform(&[3, 8], -2.0, 3.0, 4);
    let mut tape = Tape::<f64>::new();
    let xv = tape.constant(x).unwrap();
    let g = tape.constant(Tensor::ones(&[8])).unwrap();
    let b = tape.constant(Tensor::zeros(&[8])).unwrap();
    let y = tape.layer_norm(xv, g, b, 1e-5).unwrap();
    for row in tape.value(y).data().chunks(8) {
        let mean = row.iter().sum::<f64>() / 8.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-3);
    }
}

#[test]
fn backward_examples_and_contract() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(uniform(&[2, 3], -1.0, 1.0, 1), true).unwrap();
    let s = tape.sum(x).unwrap();
    tape.backward(s).unwrap();
    assert!(tape.grad(x).unwrap().data().iter().all(|&g| g == 1.0));
    assert!(matches!(tape.backward(s), Err(Error::Contract(_))));

    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t(&[1], &[3.0]), true).unwrap();
    let sq = tape.mul(x, x).unwrap();
    let l = tape.sum(sq).unwrap();
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[6.0]);

    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(uniform(&[2, 3], -1.0, 1.0, 1), true).unwrap();
    assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
}

#[test]
fn reset_allows_a_second_pass() {
    let mut store = ParamStore::new();
    store.add("w", t(&[2], &[1.0, 2.0]));
    let mut tape = Tape::with_params(&store, true);
    let w = tape.param(store.id("w").unwrap());
    let l = tape.sum(w).unwrap();
    tape.backward(l).unwrap();
    tape.reset();
    let w = tape.param(store.id("w").unwrap());
    let sq = tape.mul(w, w).unwrap();
    let l = tape.sum(sq).unwrap();
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(w).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn softmax_rows_and_sigmoid_range() {
    let x = uniform(&[4, 7, 3], -20.0, 20.0, 5);
    let sm = eval1(x.clone(), |tp, v| tp.softmax(v, 1).unwrap());
    for a in 0..4 {
        for c in 0..3 {
            let s: f64 = (0..7).map(|k| sm.get(&[a, k, c])).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
    let sg = eval1(uniform(&[100], -30.0, 30.0, 6), |tp, v| {
        tp.sigmoid(v).unwrap()
    });
    assert!(sg.data().iter().all(|&v| v > 0.0 && v < 1.0));
}

// Finite-difference checks, one per primitive.

#[test]
fn grad_binary_ops_with_broadcast() {
    gradcheck_all_seeds("add/sub/mul/div", |s| {
        let a = uniform(&[2, 3, 4, 4], -1.0, 1.0, s);
        let b = uniform(&[1, 3, 1, 4], 0.5, 1.5, s + 100);
        fd_inputs(&[a, b], |tp, v| {
            let x = tp.add(v[0], v[1]).unwrap();
            let y = tp.sub(x, v[1]).unwrap();
            let y = tp.mul(y, v[1]).unwrap();
            let z = tp.div(y, v[1]).unwrap();
            let z = tp.mul(z, x).unwrap();
            let z = tp.add_scalar(z, 0.3).unwrap();
            let z = tp.mul_scalar(z, -1.7).unwrap();
            contract(tp, z, s)
        })
    });
}

#[test]
fn grad_unary_ops() {
    gradcheck_all_seeds("unary", |s| {
        let x = away_from_zero(&[2, 4, 3, 3], 0.05, 1.5, s);
        let p = uniform(&[2, 4, 3, 3], 0.2, 2.0, s + 1);
        fd_inputs(&[x, p], |tp, v| {
            let a = tp.sigmoid(v[0]).unwrap();
            let b = tp.silu(v[0]).unwrap();
            let c = tp.relu(v[0]).unwrap();
            let d = tp.exp(v[0]).unwrap();
            let e = tp.log(v[1]).unwrap();
            let f = tp.softplus(v[0]).unwrap();
            let g = tp.clamp(v[0], -0.7, 0.9).unwrap();
            let mut acc = a;
            for y in [b, c, d, e, f, g] {
                acc = tp.add(acc, y).unwrap();
                acc = tp.mul(acc, v[1]).unwrap();
            }
            contract(tp, acc, s)
        })
    });
}

#[test]
fn grad_softmax() {
    gradcheck_all_seeds("softmax", |s| {
        let x = uniform(&[2, 4, 3, 5], -2.0, 2.0, s);
        fd_inputs(&[x], |tp, v| {
            let a = tp.softmax(v[0], 1).unwrap();
            let b = tp.softmax(v[0], 3).unwrap();
            let c = tp.mul(a, b).unwrap();
            contract(tp, c, s)
        })
    });
}

#[test]
fn grad_reductions() {
    gradcheck_all_seeds("reductions", |s| {
        let x = uniform(&[2, 4, 3, 5], -2.0, 2.0, s);
        fd_inputs(&[x], |tp, v| {
            let a = tp.sum_axis(v[0], 1, true).unwrap();
            let b = tp.mean_axis(v[0], 2, true).unwrap();
            let c = tp.max_axis(v[0], 3, true).unwrap();
            let ab = tp.mul(a, b).unwrap();
            let abc = tp.mul(ab, c).unwrap();
            let m = tp.mean(abc).unwrap();
            let s2 = contract(tp, abc, s);
            tp.add(m, s2).unwrap()
        })
    });
}

#[test]
fn grad_shape_ops() {
    gradcheck_all_seeds("reshape/permute/concat/narrow/gather", |s| {
        let x = uniform(&[2, 3, 4, 2], -1.0, 1.0, s);
        let y = uniform(&[2, 2, 4, 2], -1.0, 1.0, s + 7);
        fd_inputs(&[x, y], |tp, v| {
            let p = tp.permute(v[0], &[0, 2, 3, 1]).unwrap();
            let r = tp.reshape(p, &[2, 8, 3]).unwrap();
            let c = tp.concat(&[v[0], v[1]], 1).unwrap();
            let n = tp.narrow(c, 1, 2, 2).unwrap();
            let idx: Vec<usize> = (0..10).map(|k| (k * 7 + 3) % 48).chain([0, 0, 5]).collect();
            let g = tp.gather(v[0], idx, &[13]).unwrap();
            let a = contract(tp, r, s);
            let b = contract(tp, n, s + 1);
            let sq = tp.mul(g, g).unwrap();
            let c = contract(tp, sq, s + 2);
            let ab = tp.add(a, b).unwrap();
            tp.add(ab, c).unwrap()
        })
    });
}

#[test]
fn grad_matmul_and_linear() {
    gradcheck_all_seeds("matmul/linear", |s| {
        let a = uniform(&[2, 3, 4], -1.0, 1.0, s);
        let b = uniform(&[2, 4, 5], -1.0, 1.0, s + 1);
        let shared = uniform(&[5, 2], -1.0, 1.0, s + 2);
        let w = uniform(&[3, 2], -1.0, 1.0, s + 3);
        let bias = uniform(&[3], -1.0, 1.0, s + 4);
        fd_inputs(&[a, b, shared, w, bias], |tp, v| {
            let ab = tp.matmul(v[0], v[1]).unwrap();
            let abs = tp.matmul(ab, v[2]).unwrap();
            let y = tp.linear(abs, v[3], Some(v[4])).unwrap();
            contract(tp, y, s)
        })
    });
}

#[test]
fn grad_layer_norm() {
    gradcheck_all_seeds("layer_norm", |s| {
        let x = uniform(&[2, 4, 8], -2.0, 2.0, s);
        let g = uniform(&[8], 0.5, 1.5, s + 1);
        let b = uniform(&[8], -0.5, 0.5, s + 2);
        fd_inputs(&[x, g, b], |tp, v| {
            let y = tp.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
            contract(tp, y, s)
        })
    });
}

#[test]
fn grad_conv2d() {
    gradcheck_all_seeds("conv2d", |s| {
        let x = uniform(&[2, 4, 6, 6], -1.0, 1.0, s);
        let w = uniform(&[4, 2, 3, 3], -1.0, 1.0, s + 1);
        let b = uniform(&[4], -1.0, 1.0, s + 2);
        let w2 = uniform(&[3, 4, 2, 2], -1.0, 1.0, s + 3);
        fd_inputs(&[x, w, b, w2], |tp, v| {
            let y = tp.conv2d(v[0], v[1], Some(v[2]), 1, 1, 2).unwrap();
            let z = tp.conv2d(y, v[3], None, 2, 0, 1).unwrap();
            contract(tp, z, s)
        })
    });
}

#[test]
fn grad_pooling() {
    gradcheck_all_seeds("pool2d/channel_reduce", |s| {
        let x = uniform(&[2, 4, 8, 8], -1.0, 1.0, s);
        fd_inputs(&[x], |tp, v| {
            let a = tp.pool2d(v[0], PoolKind::Max, 2, 2).unwrap();
            let b = tp.pool2d(v[0], PoolKind::Avg, 4, 4).unwrap();
            let c = tp.pool2d(v[0], PoolKind::GlobalAvg, 0, 0).unwrap();
            let d = tp.pool2d(v[0], PoolKind::GlobalMax, 0, 0).unwrap();
            let e = tp.channel_reduce(v[0], PoolKind::Avg).unwrap();
            let f = tp.channel_reduce(v[0], PoolKind::Max).unwrap();
            let mut acc = contract(tp, a, s);
            for (k, y) in [b, c, d, e, f].into_iter().enumerate() {
                let t = contract(tp, y, s + k as u64 + 1);
                acc = tp.add(acc, t).unwrap();
            }
            acc
        })
    });
}

#[test]
fn grad_upsampling() {
    gradcheck_all_seeds("upsample", |s| {
        let x = uniform(&[2, 3, 3, 4], -1.0, 1.0, s);
        fd_inputs(&[x], |tp, v| {
            let a = tp.upsample_bilinear(v[0], 2).unwrap();
            let b = tp.upsample_bilinear(v[0], 4).unwrap();
            let c = tp.upsample_nearest(v[0], 2).unwrap();
            let ca = tp.mul(a, c).unwrap();
            let x = contract(tp, ca, s);
            let y = contract(tp, b, s + 1);
            tp.add(x, y).unwrap()
        })
    });
}

#[test]
fn grad_wavelet_primitives() {
    gradcheck_all_seeds("haar/reflect_pad/blur", |s| {
        let x = uniform(&[2, 3, 5, 7], -1.0, 1.0, s);
        fd_inputs(&[x], |tp, v| {
            let p = tp.reflect_pad_end(v[0], 1, 1).unwrap();
            let h = tp.haar_forward(p).unwrap();
            let b = tp.gaussian_blur(h, 1.0).unwrap();
            let i = tp.haar_inverse(b).unwrap();
            let sq = tp.mul(i, i).unwrap();
            let a = contract(tp, sq, s);
            let b = contract(tp, h, s + 1);
            tp.add(a, b).unwrap()
        })
    });
}

#[test]
fn grad_selective_scan() {
    gradcheck_all_seeds("selective_scan", |s| {
        let (b, l, d, n) = (2, 6, 3, 2);
        let u = uniform(&[b, l, d], -1.0, 1.0, s);
        let dt = uniform(&[b, l, d], 0.1, 0.8, s + 1);
        let a = uniform(&[d, n], -1.5, -0.2, s + 2);
        let bm = uniform(&[b, l, n], -1.0, 1.0, s + 3);
        let cm = uniform(&[b, l, n], -1.0, 1.0, s + 4);
        let dk = uniform(&[d], -1.0, 1.0, s + 5);
        fd_inputs(&[u, dt, a, bm, cm, dk], |tp, v| {
            let y = tp
                .selective_scan(v[0], v[1], v[2], v[3], v[4], v[5])
                .unwrap();
            contract(tp, y, s)
        })
    });
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn permute_then_inverse_is_identity(
        dims in prop::collection::vec(1usize..4, 1..5),
        seed in 0u64..1000,
        perm_seed in 0u64..1000,
    ) {
        let x = uniform(&dims, -1.0, 1.0, seed);
        let n = dims.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut r = common::rng(perm_seed);
        use rand::seq::SliceRandom;
        perm.shuffle(&mut r);
        let mut inv = vec![0; n];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let y = x.permute(&perm).unwrap().permute(&inv).unwrap();
        prop_assert_eq!(y, x.clone());

        let mut tape = Tape::<f64>::new();
        let v = tape.constant(x.clone()).unwrap();
        let p = tape.permute(v, &perm).unwrap();
        let q = tape.permute(p, &inv).unwrap();
        prop_assert_eq!(tape.value(q), &x);
    }

    #[test]
    fn reshape_preserves_buffer(a in 1usize..5, b in 1usize..5, c in 1usize..5, seed in 0u64..1000) {
        let x = uniform(&[a, b, c], -1.0, 1.0, seed);
        let y = x.clone().reshape(&[c, a * b]).unwrap();
        prop_assert_eq!(y.data(), x.data());
        prop_assert!(x.clone().reshape(&[a * b * c + 1]).is_err());
    }

    #[test]
    fn softmax_is_a_distribution(v in prop::collection::vec(-50.0f64..50.0, 1..20)) {
        let n = v.len();
        let y = eval1(Tensor::new(&[n], v).unwrap(), |tp, x| tp.softmax(x, 0).unwrap());
        prop_assert!((y.sum() - 1.0).abs() < 1e-12);
        prop_assert!(y.data().iter().all(|&p| (0.0..=1.0).contains(&p)));
    }
}
