//! Test-side oracles shared by the integration suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wdffu_core::{ParamStore, Tape, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.gen_range(lo..hi)).collect()).unwrap()
}

/// Values in ±[lo, hi], kept clear of zero for kinked functions.
pub fn away_from_zero(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    let n: usize = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = r.gen_range(lo..hi);
            if r.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, v).unwrap()
}

/// Scalar contraction with fixed pseudo-random weights.
pub fn contract(tape: &mut Tape<f64>, v: Var, seed: u64) -> Var {
    let shape = tape.shape(v).to_vec();
    let w = tape
        .constant(uniform(&shape, -1.0, 1.0, seed ^ 0x5EED))
        .unwrap();
    let p = tape.mul(v, w).unwrap();
    tape.sum(p).unwrap()
}

fn rel(a: &[f64], n: &[f64]) -> f64 {
    let d = a
        .iter()
        .zip(n)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let s = a.iter().chain(n).map(|x| x.abs()).fold(0.0, f64::max);
    if s == 0.0 {
        0.0
    } else {
        d / s
    }
}

/// Worst relative error between backward gradients and central differences
/// (step 1e-5) over the inputs and the parameters whose names start with one
/// of `prefixes` (all when empty). At most `probes` entries per tensor.
pub fn fd_error<F>(
    store: &mut ParamStore<f64>,
    inputs: &[Tensor<f64>],
    prefixes: &[&str],
    probes: usize,
    f: F,
) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    const H: f64 = 1e-5;
    let value = |store: &ParamStore<f64>, xs: &[Tensor<f64>]| {
        let mut t = Tape::with_params(store, false);
        let vs: Vec<Var> = xs.iter().map(|x| t.constant(x.clone()).unwrap()).collect();
        let l = f(&mut t, &vs);
        t.value(l).item()
    };
    let mut tape = Tape::with_params(store, true);
    let vs: Vec<Var> = inputs
        .iter()
        .map(|x| tape.leaf(x.clone(), true).unwrap())
        .collect();
    let loss = f(&mut tape, &vs);
    tape.backward(loss).unwrap();
    let in_grads: Vec<Tensor<f64>> = vs
        .iter()
        .zip(inputs)
        .map(|(&v, x)| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(x.shape()))
        })
        .collect();
    let mut param_grads = Vec::new();
    for id in store.ids() {
        let v = tape.param(id);
        param_grads.push(tape.grad(v).cloned());
    }

    let mut r = rng(99);
    let mut pick = |n: usize| -> Vec<usize> {
        if n <= probes {
            (0..n).collect()
        } else {
            (0..probes).map(|_| r.gen_range(0..n)).collect()
        }
    };
    let mut worst = 0.0f64;
    let mut xs = inputs.to_vec();
    for k in 0..xs.len() {
        let (mut a, mut n) = (vec![], vec![]);
        for i in pick(xs[k].numel()) {
            let o = xs[k].data()[i];
            xs[k].data_mut()[i] = o + H;
            let p = value(store, &xs);
            xs[k].data_mut()[i] = o - H;
            let m = value(store, &xs);
            xs[k].data_mut()[i] = o;
            a.push(in_grads[k].data()[i]);
            n.push((p - m) / (2.0 * H));
        }
        worst = worst.max(rel(&a, &n));
    }
    let ids: Vec<_> = store.ids().collect();
    let (mut a, mut n) = (vec![], vec![]);
    for (k, id) in ids.into_iter().enumerate() {
        let name = store.get(id).name.clone();
        if !prefixes.is_empty() && !prefixes.iter().any(|p| name.starts_with(p)) {
            continue;
        }
        let numel = store.get(id).value.numel();
        let g = param_grads[k]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(store.get(id).value.shape()));
        for i in pick(numel) {
            let o = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = o + H;
            let p = value(store, &xs);
            store.get_mut(id).value.data_mut()[i] = o - H;
            let m = value(store, &xs);
            store.get_mut(id).value.data_mut()[i] = o;
            a.push(g.data()[i]);
            n.push((p - m) / (2.0 * H));
        }
    }
    worst.max(rel(&a, &n))
}

/// Input-only variant of [`fd_error`].
pub fn fd_inputs<F>(inputs: &[Tensor<f64>], f: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    fd_error(&mut ParamStore::new(), inputs, &[], usize::MAX, f)
}

/// Direct cross-correlation with zero padding.
pub fn conv_oracle(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: Option<&Tensor<f64>>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Tensor<f64> {
    let (n, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, cpg, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let opg = cout / groups;
    let mut out = vec![0.0; n * cout * oh * ow];
    for ni in 0..n {
        for co in 0..cout {
            let g = co / opg;
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b.data()[co]);
                    for ci in 0..cpg {
                        let c = g * cpg + ci;
                        for a in 0..kh {
                            for bb in 0..kw {
                                let y = (i * stride + a) as isize - pad as isize;
                                let xx = (j * stride + bb) as isize - pad as isize;
                                if y < 0 || xx < 0 || y >= h as isize || xx >= wd as isize {
                                    continue;
                                }
                                acc += x.data()
                                    [((ni * cin + c) * h + y as usize) * wd + xx as usize]
                                    * w.data()[((co * cpg + ci) * kh + a) * kw + bb];
                            }
                        }
                    }
                    out[((ni * cout + co) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    let _ = cin;
    Tensor::new(&[n, cout, oh, ow], out).unwrap()
}

/// Sequential selective-scan recurrence for batch element `bi`.
#[allow(clippy::too_many_arguments)]
pub fn scan_oracle(
    l: usize,
    d: usize,
    s: usize,
    u: &[f64],
    dt: &[f64],
    a: &[f64],
    b: &[f64],
    c: &[f64],
    skip: &[f64],
) -> Vec<f64> {
    let mut h = vec![0.0; d * s];
    let mut y = vec![0.0; l * d];
    for t in 0..l {
        for di in 0..d {
            let mut acc = 0.0;
            for si in 0..s {
                let k = di * s + si;
                let decay = (dt[t * d + di] * a[k]).exp();
                h[k] = decay * h[k] + dt[t * d + di] * b[t * s + si] * u[t * d + di];
                acc += c[t * s + si] * h[k];
            }
            y[t * d + di] = acc + skip[di] * u[t * d + di];
        }
    }
    y
}

/// Brute-force symmetric 95th-percentile Hausdorff distance on boundary sets.
pub fn hd95_oracle(a: &[(usize, usize)], b: &[(usize, usize)]) -> f64 {
    let directed = |p: &[(usize, usize)], q: &[(usize, usize)]| {
        let mut d: Vec<f64> = p
            .iter()
            .map(|&(i, j)| {
                q.iter()
                    .map(|&(k, l)| {
                        let di = i as f64 - k as f64;
                        let dj = j as f64 - l as f64;
                        (di * di + dj * dj).sqrt()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        d.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let pos = 0.95 * (d.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(d.len() - 1);
        d[lo] + (d[hi] - d[lo]) * (pos - lo as f64)
    };
    directed(a, b).max(directed(b, a))
}

/// Boundary pixels by direct neighbour inspection.
pub fn boundary_oracle(h: usize, w: usize, m: &[u8]) -> Vec<(usize, usize)> {
    let at = |i: isize, j: isize| {
        i >= 0
            && j >= 0
            && (i as usize) < h
            && (j as usize) < w
            && m[i as usize * w + j as usize] == 1
    };
    let mut out = vec![];
    for i in 0..h as isize {
        for j in 0..w as isize {
            if at(i, j) && !(at(i - 1, j) && at(i + 1, j) && at(i, j - 1) && at(i, j + 1)) {
                out.push((i as usize, j as usize));
            }
        }
    }
    out
}
