use super::op::Op;
use super::{Tape, Var};
use crate::error::{ensure_dim, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Spatial pooling flavours.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
    /// Per-channel mean over H×W, giving N×C×1×1.
    GlobalAvg,
    /// Per-channel max over H×W, giving N×C×1×1.
    GlobalMax,
}

/// `out += a·b` for row-major `m×k` and `k×n` blocks.
fn gemm_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out += a·bᵀ` for `a: m×k`, `b: n×k`.
fn gemm_nt_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                s += x * y;
            }
            out[i * n + j] += s;
        }
    }
}

/// `out += aᵀ·b` for `a: m×k`, `b: m×n`, giving `k×n`.
fn gemm_tn_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

struct MatMulDims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    shared_rhs: bool,
}

fn matmul_dims(a: &[usize], b: &[usize]) -> Result<MatMulDims> {
    ensure_dim!(
        a.len() >= 2 && b.len() >= 2,
        "matmul needs rank ≥ 2, got {a:?} and {b:?}"
    );
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    ensure_dim!(k == k2, "matmul inner dimensions differ: {a:?} · {b:?}");
    let batch: usize = a[..a.len() - 2].iter().product();
    let shared_rhs = b.len() == 2;
    if !shared_rhs {
        ensure_dim!(
            a[..a.len() - 2] == b[..b.len() - 2],
            "matmul batch dimensions differ: {a:?} · {b:?}"
        );
    }
    Ok(MatMulDims {
        batch,
        m,
        k,
        n,
        shared_rhs,
    })
}

pub(super) fn matmul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    g: &[T],
    need: &[bool],
) -> Vec<Option<Vec<T>>> {
    let d = matmul_dims(a.shape(), b.shape()).expect("validated in forward");
    let (mk, kn, mn) = (d.m * d.k, d.k * d.n, d.m * d.n);
    let ga = need[0].then(|| {
        let mut ga = vec![T::zero(); a.numel()];
        for bi in 0..d.batch {
            let boff = if d.shared_rhs { 0 } else { bi * kn };
            gemm_nt_acc(
                &g[bi * mn..][..mn],
                &b.data()[boff..][..kn],
                &mut ga[bi * mk..][..mk],
                d.m,
                d.n,
                d.k,
            );
        }
        ga
    });
    let gb = need[1].then(|| {
        let mut gb = vec![T::zero(); b.numel()];
        for bi in 0..d.batch {
            let boff = if d.shared_rhs { 0 } else { bi * kn };
            gemm_tn_acc(
                &a.data()[bi * mk..][..mk],
                &g[bi * mn..][..mn],
                &mut gb[boff..][..kn],
                d.m,
                d.k,
                d.n,
            );
        }
        gb
    });
    vec![ga, gb]
}

pub(super) fn linear_backward<T: Scalar>(
    inputs: &[&Tensor<T>],
    g: &[T],
    need: &[bool],
) -> Vec<Option<Vec<T>>> {
    let (x, w) = (inputs[0], inputs[1]);
    let (out_f, in_f) = (w.shape()[0], w.shape()[1]);
    let rows = x.numel() / in_f;
    let mut grads = Vec::with_capacity(inputs.len());
    grads.push(need[0].then(|| {
        let mut gx = vec![T::zero(); x.numel()];
        gemm_acc(g, w.data(), &mut gx, rows, out_f, in_f);
        gx
    }));
    grads.push(need[1].then(|| {
        let mut gw = vec![T::zero(); w.numel()];
        gemm_tn_acc(g, x.data(), &mut gw, rows, out_f, in_f);
        gw
    }));
    if inputs.len() == 3 {
        grads.push(need[2].then(|| {
            let mut gb = vec![T::zero(); out_f];
            for r in 0..rows {
                for (o, b) in gb.iter_mut().enumerate() {
                    *b += g[r * out_f + o];
                }
            }
            gb
        }));
    }
    grads
}

pub(super) fn layer_norm_backward<T: Scalar>(
    inputs: &[&Tensor<T>],
    _eps: T,
    mean: &[T],
    rstd: &[T],
    g: &[T],
    need: &[bool],
) -> Vec<Option<Vec<T>>> {
    let (x, gamma) = (inputs[0], inputs[1]);
    let d = gamma.numel();
    let rows = x.numel() / d;
    let xd = x.data();
    let gd = gamma.data();
    let mut gx = need[0].then(|| vec![T::zero(); x.numel()]);
    let mut ggamma = vec![T::zero(); d];
    let mut gbeta = vec![T::zero(); d];
    let inv_d = T::one() / T::lit(d as f64);
    let mut gxhat = vec![T::zero(); d];
    for r in 0..rows {
        let row = &xd[r * d..(r + 1) * d];
        let grow = &g[r * d..(r + 1) * d];
        let (mu, rs) = (mean[r], rstd[r]);
        let mut sum_gxhat = T::zero();
        let mut sum_gxhat_xhat = T::zero();
        for j in 0..d {
            let xhat = (row[j] - mu) * rs;
            ggamma[j] += grow[j] * xhat;
            gbeta[j] += grow[j];
            gxhat[j] = grow[j] * gd[j];
            sum_gxhat += gxhat[j];
            sum_gxhat_xhat += gxhat[j] * xhat;
        }
        if let Some(gx) = gx.as_mut() {
            for j in 0..d {
                let xhat = (row[j] - mu) * rs;
                gx[r * d + j] = rs * (gxhat[j] - inv_d * sum_gxhat - xhat * inv_d * sum_gxhat_xhat);
            }
        }
    }
    vec![gx, need[1].then_some(ggamma), need[2].then_some(gbeta)]
}

struct ConvDims {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    cin_g: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn conv_dims(
    x: &[usize],
    w: &[usize],
    stride: usize,
    pad: usize,
    groups: usize,
) -> Result<ConvDims> {
    ensure_dim!(
        x.len() == 4 && w.len() == 4,
        "conv2d needs 4-d input and weight, got {x:?}, {w:?}"
    );
    ensure_dim!(
        stride >= 1 && groups >= 1,
        "conv2d stride and groups must be ≥ 1"
    );
    let (n, cin, h, wd) = (x[0], x[1], x[2], x[3]);
    let (cout, cin_g, kh, kw) = (w[0], w[1], w[2], w[3]);
    ensure_dim!(
        cin % groups == 0 && cout % groups == 0,
        "channels {cin}→{cout} not divisible by groups {groups}"
    );
    ensure_dim!(
        cin_g * groups == cin,
        "weight expects {} input channels, input has {cin}",
        cin_g * groups
    );
    ensure_dim!(
        h + 2 * pad >= kh && wd + 2 * pad >= kw,
        "kernel {kh}×{kw} larger than padded input {}×{}",
        h + 2 * pad,
        wd + 2 * pad
    );
    Ok(ConvDims {
        n,
        cin,
        h,
        w: wd,
        cout,
        cin_g,
        kh,
        kw,
        oh: (h + 2 * pad - kh) / stride + 1,
        ow: (wd + 2 * pad - kw) / stride + 1,
    })
}

/// Output positions `o` in `[lo, hi)` whose input index `o*stride + k - pad` lies in `[0, len)`.
#[inline]
fn valid_range(out_len: usize, len: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if k >= pad {
        0
    } else {
        (pad - k).div_ceil(stride)
    };
    // o*stride + k - pad <= len - 1
    let hi = if len + pad < k + 1 {
        0
    } else {
        ((len + pad - k - 1) / stride + 1).min(out_len)
    };
    (lo.min(hi), hi)
}

fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    d: &ConvDims,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Vec<T> {
    let cout_g = d.cout / groups;
    let (xd, wd) = (x.data(), w.data());
    let plane_in = d.h * d.w;
    let plane_out = d.oh * d.ow;
    let mut out = vec![T::zero(); d.n * d.cout * plane_out];
    for n in 0..d.n {
        for oc in 0..d.cout {
            let g = oc / cout_g;
            let o = &mut out[(n * d.cout + oc) * plane_out..][..plane_out];
            if let Some(b) = b {
                o.iter_mut().for_each(|v| *v = b.data()[oc]);
            }
            for icl in 0..d.cin_g {
                let ic = g * d.cin_g + icl;
                let xin = &xd[(n * d.cin + ic) * plane_in..][..plane_in];
                for ki in 0..d.kh {
                    let (oh_lo, oh_hi) = valid_range(d.oh, d.h, ki, stride, pad);
                    for kj in 0..d.kw {
                        let wv = wd[((oc * d.cin_g + icl) * d.kh + ki) * d.kw + kj];
                        if wv == T::zero() {
                            continue;
                        }
                        let (ow_lo, ow_hi) = valid_range(d.ow, d.w, kj, stride, pad);
                        for oh in oh_lo..oh_hi {
                            let ih = oh * stride + ki - pad;
                            let orow = &mut o[oh * d.ow..(oh + 1) * d.ow];
                            let irow = &xin[ih * d.w..(ih + 1) * d.w];
                            for ow in ow_lo..ow_hi {
                                orow[ow] += wv * irow[ow * stride + kj - pad];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub(super) fn conv2d_backward<T: Scalar>(
    inputs: &[&Tensor<T>],
    out_shape: &[usize],
    stride: usize,
    pad: usize,
    groups: usize,
    g: &[T],
    need: &[bool],
) -> Vec<Option<Vec<T>>> {
    let (x, w) = (inputs[0], inputs[1]);
    let d = conv_dims(x.shape(), w.shape(), stride, pad, groups).expect("validated in forward");
    debug_assert_eq!(out_shape, &[d.n, d.cout, d.oh, d.ow]);
    let cout_g = d.cout / groups;
    let (xd, wd) = (x.data(), w.data());
    let plane_in = d.h * d.w;
    let plane_out = d.oh * d.ow;
    let mut gx = need[0].then(|| vec![T::zero(); x.numel()]);
    let mut gw = need[1].then(|| vec![T::zero(); w.numel()]);
    for n in 0..d.n {
        for oc in 0..d.cout {
            let grp = oc / cout_g;
            let go = &g[(n * d.cout + oc) * plane_out..][..plane_out];
            for icl in 0..d.cin_g {
                let ic = grp * d.cin_g + icl;
                let xoff = (n * d.cin + ic) * plane_in;
                for ki in 0..d.kh {
                    let (oh_lo, oh_hi) = valid_range(d.oh, d.h, ki, stride, pad);
                    for kj in 0..d.kw {
                        let widx = ((oc * d.cin_g + icl) * d.kh + ki) * d.kw + kj;
                        let wv = wd[widx];
                        let (ow_lo, ow_hi) = valid_range(d.ow, d.w, kj, stride, pad);
                        let mut acc = T::zero();
                        for oh in oh_lo..oh_hi {
                            let ih = oh * stride + ki - pad;
                            let grow = &go[oh * d.ow..(oh + 1) * d.ow];
                            let ibase = xoff + ih * d.w;
                            if gw.is_some() {
                                let irow = &xd[ibase..ibase + d.w];
                                for ow in ow_lo..ow_hi {
                                    acc += grow[ow] * irow[ow * stride + kj - pad];
                                }
                            }
                            if let Some(gx) = gx.as_mut() {
                                if wv != T::zero() {
                                    let grow_x = &mut gx[ibase..ibase + d.w];
                                    for ow in ow_lo..ow_hi {
                                        grow_x[ow * stride + kj - pad] += wv * grow[ow];
                                    }
                                }
                            }
                        }
                        if let Some(gw) = gw.as_mut() {
                            gw[widx] += acc;
                        }
                    }
                }
            }
        }
    }
    let mut grads = vec![gx, gw];
    if inputs.len() == 3 {
        grads.push(need[2].then(|| {
            let mut gb = vec![T::zero(); d.cout];
            for n in 0..d.n {
                for (oc, b) in gb.iter_mut().enumerate() {
                    *b += g[(n * d.cout + oc) * plane_out..][..plane_out]
                        .iter()
                        .copied()
                        .sum::<T>();
                }
            }
            gb
        }));
    }
    grads
}

pub(super) fn avg_pool_backward<T: Scalar>(
    in_shape: &[usize],
    k: usize,
    stride: usize,
    g: &[T],
) -> Vec<T> {
    let (planes, h, w) = (in_shape[0] * in_shape[1], in_shape[2], in_shape[3]);
    let (oh, ow) = ((h - k) / stride + 1, (w - k) / stride + 1);
    let scale = T::one() / T::lit((k * k) as f64);
    let mut gx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        for i in 0..oh {
            for j in 0..ow {
                let gv = g[(p * oh + i) * ow + j] * scale;
                for a in 0..k {
                    for b in 0..k {
                        gx[(p * h + i * stride + a) * w + j * stride + b] += gv;
                    }
                }
            }
        }
    }
    gx
}

/// Source taps (i0, i1, w0, w1) for bilinear upsampling with half-pixel centers.
fn bilinear_taps<T: Scalar>(len: usize, factor: usize) -> Vec<(usize, usize, T, T)> {
    let f = factor as f64;
    (0..len * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / f - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            let l1 = src - i0 as f64;
            (i0, i1, T::lit(1.0 - l1), T::lit(l1))
        })
        .collect()
}

pub(super) fn bilinear_backward<T: Scalar>(in_shape: &[usize], factor: usize, g: &[T]) -> Vec<T> {
    let (planes, h, w) = (in_shape[0] * in_shape[1], in_shape[2], in_shape[3]);
    let (oh, ow) = (h * factor, w * factor);
    let ty = bilinear_taps::<T>(h, factor);
    let tx = bilinear_taps::<T>(w, factor);
    let mut gx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let dst = &mut gx[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                let gv = g[(p * oh + oy) * ow + ox];
                dst[y0 * w + x0] += gv * wy0 * wx0;
                dst[y0 * w + x1] += gv * wy0 * wx1;
                dst[y1 * w + x0] += gv * wy1 * wx0;
                dst[y1 * w + x1] += gv * wy1 * wx1;
            }
        }
    }
    gx
}

pub(super) fn nearest_backward<T: Scalar>(in_shape: &[usize], factor: usize, g: &[T]) -> Vec<T> {
    let (planes, h, w) = (in_shape[0] * in_shape[1], in_shape[2], in_shape[3]);
    let (oh, ow) = (h * factor, w * factor);
    let mut gx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        for oy in 0..oh {
            for ox in 0..ow {
                gx[(p * h + oy / factor) * w + ox / factor] += g[(p * oh + oy) * ow + ox];
            }
        }
    }
    gx
}

fn spatial_dims(shape: &[usize], op: &str) -> Result<(usize, usize, usize, usize)> {
    ensure_dim!(shape.len() == 4, "{op} expects N×C×H×W, got {shape:?}");
    Ok((shape[0], shape[1], shape[2], shape[3]))
}

impl<T: Scalar> Tape<T> {
    /// Batched matrix product over the last two axes. A rank-2 right operand
    /// is shared across the batch.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let d = matmul_dims(ta.shape(), tb.shape())?;
        let (mk, kn, mn) = (d.m * d.k, d.k * d.n, d.m * d.n);
        let mut out = vec![T::zero(); d.batch * mn];
        for bi in 0..d.batch {
            let boff = if d.shared_rhs { 0 } else { bi * kn };
            gemm_acc(
                &ta.data()[bi * mk..][..mk],
                &tb.data()[boff..][..kn],
                &mut out[bi * mn..][..mn],
                d.m,
                d.k,
                d.n,
            );
        }
        let mut shape = ta.shape().to_vec();
        *shape.last_mut().unwrap() = d.n;
        self.push(Tensor::new(&shape, out)?, Op::MatMul, &[a, b])
    }

    /// `x·wᵀ + b` on the last axis; `w` is `out×in`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        ensure_dim!(
            tw.ndim() == 2,
            "linear weight must be 2-d, got {:?}",
            tw.shape()
        );
        let (out_f, in_f) = (tw.shape()[0], tw.shape()[1]);
        ensure_dim!(
            tx.shape().last() == Some(&in_f),
            "linear expects last axis {in_f}, got {:?}",
            tx.shape()
        );
        let rows = tx.numel() / in_f;
        let mut out = vec![T::zero(); rows * out_f];
        if let Some(b) = b {
            let tb = self.value(b);
            ensure_dim!(
                tb.shape() == [out_f],
                "linear bias shape {:?}, expected [{out_f}]",
                tb.shape()
            );
            for r in 0..rows {
                out[r * out_f..(r + 1) * out_f].copy_from_slice(tb.data());
            }
        }
        gemm_nt_acc(tx.data(), tw.data(), &mut out, rows, in_f, out_f);
        let mut shape = tx.shape().to_vec();
        *shape.last_mut().unwrap() = out_f;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(Tensor::new(&shape, out)?, Op::Linear, &inputs)
    }

    /// Normalizes over the last axis, then applies `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let tx = self.value(x);
        let d = *tx
            .shape()
            .last()
            .ok_or_else(|| crate::error::dim_err!("layer_norm on rank-0"))?;
        let (tg, tb) = (self.value(gamma), self.value(beta));
        ensure_dim!(
            tg.shape() == [d] && tb.shape() == [d],
            "layer_norm affine shapes {:?}/{:?}, expected [{d}]",
            tg.shape(),
            tb.shape()
        );
        let rows = tx.numel() / d;
        let inv_d = T::one() / T::lit(d as f64);
        let mut out = vec![T::zero(); tx.numel()];
        let mut mean = Vec::with_capacity(rows);
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &tx.data()[r * d..(r + 1) * d];
            let mu = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() * inv_d;
            let rs = T::one() / (var + eps).sqrt();
            for j in 0..d {
                out[r * d + j] = (row[j] - mu) * rs * tg.data()[j] + tb.data()[j];
            }
            mean.push(mu);
            rstd.push(rs);
        }
        let out = Tensor::new(tx.shape(), out)?;
        self.push(out, Op::LayerNorm { eps, mean, rstd }, &[x, gamma, beta])
    }

    /// 2-d cross-correlation (no kernel flip). `w` is `Cout×(Cin/groups)×kh×kw`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        let d = conv_dims(tx.shape(), tw.shape(), stride, pad, groups)?;
        let tb = match b {
            Some(b) => {
                let tb = self.value(b);
                ensure_dim!(
                    tb.shape() == [d.cout],
                    "conv bias shape {:?}, expected [{}]",
                    tb.shape(),
                    d.cout
                );
                Some(tb)
            }
            None => None,
        };
        let out = conv2d_forward(tx, tw, tb, &d, stride, pad, groups);
        let out = Tensor::new(&[d.n, d.cout, d.oh, d.ow], out)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(
            out,
            Op::Conv2d {
                stride,
                pad,
                groups,
            },
            &inputs,
        )
    }

    /// Windowed or global pooling. Windowed kinds need H and W divisible by
    /// `stride`; global kinds ignore `k` and `stride`.
    pub fn pool2d(&mut self, x: Var, kind: PoolKind, k: usize, stride: usize) -> Result<Var> {
        let (n, c, h, w) = spatial_dims(self.shape(x), "pool2d")?;
        match kind {
            PoolKind::GlobalAvg | PoolKind::GlobalMax => {
                let flat = self.reshape(x, &[n, c, h * w])?;
                let r = if kind == PoolKind::GlobalAvg {
                    self.mean_axis(flat, 2, true)?
                } else {
                    self.max_axis(flat, 2, true)?
                };
                self.reshape(r, &[n, c, 1, 1])
            }
            PoolKind::Max | PoolKind::Avg => {
                ensure_dim!(k >= 1 && stride >= 1, "pool window and stride must be ≥ 1");
                ensure_dim!(
                    h % stride == 0 && w % stride == 0 && k <= h && k <= w,
                    "pool window {k} stride {stride} does not tile {h}×{w}"
                );
                let (oh, ow) = ((h - k) / stride + 1, (w - k) / stride + 1);
                let xd = self.value(x).data();
                let planes = n * c;
                let mut out = Vec::with_capacity(planes * oh * ow);
                let mut argmax = Vec::new();
                let inv = T::one() / T::lit((k * k) as f64);
                for p in 0..planes {
                    for i in 0..oh {
                        for j in 0..ow {
                            let mut best = (p * h + i * stride) * w + j * stride;
                            let mut acc = T::zero();
                            for a in 0..k {
                                for b in 0..k {
                                    let idx = (p * h + i * stride + a) * w + j * stride + b;
                                    acc += xd[idx];
                                    if xd[idx] > xd[best] {
                                        best = idx;
                                    }
                                }
                            }
                            if kind == PoolKind::Max {
                                out.push(xd[best]);
                                argmax.push(best);
                            } else {
                                out.push(acc * inv);
                            }
                        }
                    }
                }
                let out = Tensor::new(&[n, c, oh, ow], out)?;
                let op = if kind == PoolKind::Max {
                    Op::MaxPool2d { argmax }
                } else {
                    Op::AvgPool2d { k, stride }
                };
                self.push(out, op, &[x])
            }
        }
    }

    /// Mean or max across the channel axis, giving N×1×H×W.
    pub fn channel_reduce(&mut self, x: Var, kind: PoolKind) -> Result<Var> {
        spatial_dims(self.shape(x), "channel_reduce")?;
        match kind {
            PoolKind::Avg | PoolKind::GlobalAvg => self.mean_axis(x, 1, true),
            PoolKind::Max | PoolKind::GlobalMax => self.max_axis(x, 1, true),
        }
    }

    /// Bilinear upsampling by an integer factor with half-pixel centers
    /// (corner outputs sample cell centers, not corners).
    pub fn upsample_bilinear(&mut self, x: Var, factor: usize) -> Result<Var> {
        let (n, c, h, w) = spatial_dims(self.shape(x), "upsample_bilinear")?;
        ensure_dim!(
            factor >= 1 && h > 0 && w > 0,
            "bad upsample factor {factor} for {h}×{w}"
        );
        if factor == 1 {
            return self.reshape(x, &[n, c, h, w]);
        }
        let (oh, ow) = (h * factor, w * factor);
        let ty = bilinear_taps::<T>(h, factor);
        let tx = bilinear_taps::<T>(w, factor);
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for p in 0..n * c {
            let src = &xd[p * h * w..(p + 1) * h * w];
            for &(y0, y1, wy0, wy1) in &ty {
                for &(x0, x1, wx0, wx1) in &tx {
                    out.push(
                        wy0 * (wx0 * src[y0 * w + x0] + wx1 * src[y0 * w + x1])
                            + wy1 * (wx0 * src[y1 * w + x0] + wx1 * src[y1 * w + x1]),
                    );
                }
            }
        }
        let out = Tensor::new(&[n, c, oh, ow], out)?;
        self.push(out, Op::UpsampleBilinear { factor }, &[x])
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let (n, c, h, w) = spatial_dims(self.shape(x), "upsample_nearest")?;
        ensure_dim!(factor >= 1, "bad upsample factor {factor}");
        let (oh, ow) = (h * factor, w * factor);
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for p in 0..n * c {
            for oy in 0..oh {
                for ox in 0..ow {
                    out.push(xd[(p * h + oy / factor) * w + ox / factor]);
                }
            }
        }
        let out = Tensor::new(&[n, c, oh, ow], out)?;
        self.push(out, Op::UpsampleNearest { factor }, &[x])
    }
}
