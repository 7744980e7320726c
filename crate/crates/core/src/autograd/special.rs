//! Fused primitives with hand-written adjoints: orthonormal Haar analysis and
//! synthesis, reflect padding, separable Gaussian blur and the selective scan.

use super::op::Op;
use super::{Tape, Var};
use crate::error::{ensure_dim, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Mirror index without edge repetition (`-1 → 1`, `n → n-2`), valid for any offset.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Normalized 1-d Gaussian taps with radius `ceil(3σ)`.
pub fn gaussian_kernel_1d<T: Scalar>(sigma: f64) -> Result<Vec<T>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Contract(format!(
            "gaussian sigma must be positive, got {sigma}"
        )));
    }
    let r = (3.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let z: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|v| T::lit(v / z)).collect())
}

/// Block `[[a,b],[c,d]]` → LL, LH, HL, HH in channel blocks of size C.
pub(super) fn haar_forward_kernel<T: Scalar>(shape: &[usize], x: &[T]) -> Vec<T> {
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let (h2, w2) = (h / 2, w / 2);
    let half = T::lit(0.5);
    let band = c * h2 * w2;
    let mut out = vec![T::zero(); n * 4 * band];
    for ni in 0..n {
        for ci in 0..c {
            let src = &x[(ni * c + ci) * h * w..][..h * w];
            for i in 0..h2 {
                for j in 0..w2 {
                    let a = src[2 * i * w + 2 * j];
                    let b = src[2 * i * w + 2 * j + 1];
                    let cc = src[(2 * i + 1) * w + 2 * j];
                    let d = src[(2 * i + 1) * w + 2 * j + 1];
                    let base = ni * 4 * band + (ci * h2 + i) * w2 + j;
                    out[base] = (a + b + cc + d) * half;
                    out[base + band] = (a - b + cc - d) * half;
                    out[base + 2 * band] = (a + b - cc - d) * half;
                    out[base + 3 * band] = (a - b - cc + d) * half;
                }
            }
        }
    }
    out
}

pub(super) fn haar_inverse_kernel<T: Scalar>(shape: &[usize], s: &[T]) -> Vec<T> {
    let (n, c4, h2, w2) = (shape[0], shape[1], shape[2], shape[3]);
    let c = c4 / 4;
    let (h, w) = (2 * h2, 2 * w2);
    let half = T::lit(0.5);
    let band = c * h2 * w2;
    let mut out = vec![T::zero(); n * c * h * w];
    for ni in 0..n {
        for ci in 0..c {
            let dst = &mut out[(ni * c + ci) * h * w..][..h * w];
            for i in 0..h2 {
                for j in 0..w2 {
                    let base = ni * 4 * band + (ci * h2 + i) * w2 + j;
                    let (ll, lh, hl, hh) = (
                        s[base],
                        s[base + band],
                        s[base + 2 * band],
                        s[base + 3 * band],
                    );
                    dst[2 * i * w + 2 * j] = (ll + lh + hl + hh) * half;
                    dst[2 * i * w + 2 * j + 1] = (ll - lh + hl - hh) * half;
                    dst[(2 * i + 1) * w + 2 * j] = (ll + lh - hl - hh) * half;
                    dst[(2 * i + 1) * w + 2 * j + 1] = (ll - lh - hl + hh) * half;
                }
            }
        }
    }
    out
}

pub(super) fn reflect_pad_backward<T: Scalar>(
    in_shape: &[usize],
    ph: usize,
    pw: usize,
    g: &[T],
) -> Vec<T> {
    let (planes, h, w) = (in_shape[0] * in_shape[1], in_shape[2], in_shape[3]);
    let (oh, ow) = (h + ph, w + pw);
    let mut gx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        for i in 0..oh {
            let si = reflect_index(i as isize, h);
            for j in 0..ow {
                let sj = reflect_index(j as isize, w);
                gx[(p * h + si) * w + sj] += g[(p * oh + i) * ow + j];
            }
        }
    }
    gx
}

/// One reflect-padded 1-d correlation pass over every row (`along_w`) or column.
fn blur_pass<T: Scalar>(shape: &[usize], x: &[T], k: &[T], along_w: bool, adjoint: bool) -> Vec<T> {
    let (planes, h, w) = (shape[0] * shape[1], shape[2], shape[3]);
    let r = (k.len() / 2) as isize;
    let mut out = vec![T::zero(); x.len()];
    let (len, step, lines, line_step) = if along_w { (w, 1, h, w) } else { (h, w, w, 1) };
    for p in 0..planes {
        let base = p * h * w;
        for line in 0..lines {
            let lb = base + line * line_step;
            for o in 0..len {
                for (t, &kv) in k.iter().enumerate() {
                    let src = reflect_index(o as isize + t as isize - r, len);
                    if adjoint {
                        out[lb + src * step] += kv * x[lb + o * step];
                    } else {
                        out[lb + o * step] += kv * x[lb + src * step];
                    }
                }
            }
        }
    }
    out
}

pub(super) fn blur_backward<T: Scalar>(shape: &[usize], k: &[T], g: &[T]) -> Vec<T> {
    let gt = blur_pass(shape, g, k, false, true);
    blur_pass(shape, &gt, k, true, true)
}

struct ScanDims {
    batch: usize,
    len: usize,
    d: usize,
    s: usize,
}

pub(super) fn scan_backward<T: Scalar>(
    inputs: &[&Tensor<T>],
    states: &[T],
    g: &[T],
    need: &[bool],
) -> Vec<Option<Vec<T>>> {
    let (u, delta, a, bm, cm, dskip) = (
        inputs[0], inputs[1], inputs[2], inputs[3], inputs[4], inputs[5],
    );
    let dims = ScanDims {
        batch: u.shape()[0],
        len: u.shape()[1],
        d: u.shape()[2],
        s: a.shape()[1],
    };
    let (ud, dd, ad, bd, cd, skd) = (
        u.data(),
        delta.data(),
        a.data(),
        bm.data(),
        cm.data(),
        dskip.data(),
    );
    let (dn, sn) = (dims.d, dims.s);
    let mut gu = vec![T::zero(); u.numel()];
    let mut gdelta = vec![T::zero(); delta.numel()];
    let mut ga = vec![T::zero(); a.numel()];
    let mut gb = vec![T::zero(); bm.numel()];
    let mut gc = vec![T::zero(); cm.numel()];
    let mut gd = vec![T::zero(); dskip.numel()];
    let mut gh = vec![T::zero(); sn];
    for b in 0..dims.batch {
        for ch in 0..dn {
            gh.iter_mut().for_each(|v| *v = T::zero());
            for t in (0..dims.len).rev() {
                let ti = (b * dims.len + t) * dn + ch;
                let si = (b * dims.len + t) * sn;
                let (gy, uv, dv) = (g[ti], ud[ti], dd[ti]);
                gu[ti] += skd[ch] * gy;
                gd[ch] += gy * uv;
                let h_t = &states[ti * sn..(ti + 1) * sn];
                let h_prev = (t > 0).then(|| &states[(ti - dn) * sn..(ti - dn + 1) * sn]);
                let mut gdv = T::zero();
                for s in 0..sn {
                    gh[s] += cd[si + s] * gy;
                    gc[si + s] += gy * h_t[s];
                    let av = ad[ch * sn + s];
                    let decay = (dv * av).exp();
                    let hp = h_prev.map_or(T::zero(), |hp| hp[s]);
                    gdv += gh[s] * (av * decay * hp + bd[si + s] * uv);
                    ga[ch * sn + s] += gh[s] * dv * decay * hp;
                    gb[si + s] += gh[s] * dv * uv;
                    gu[ti] += gh[s] * dv * bd[si + s];
                    gh[s] *= decay;
                }
                gdelta[ti] += gdv;
            }
        }
    }
    [gu, gdelta, ga, gb, gc, gd]
        .into_iter()
        .zip(need)
        .map(|(g, &n)| n.then_some(g))
        .collect()
}

impl<T: Scalar> Tape<T> {
    /// Orthonormal single-level Haar analysis of an N×C×H×W map with even H, W.
    /// Output is N×4C×H/2×W/2 with channel blocks `[LL | LH | HL | HH]`.
    pub fn haar_forward(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let s = tx.shape();
        ensure_dim!(s.len() == 4, "haar_forward expects N×C×H×W, got {s:?}");
        ensure_dim!(
            s[2] > 0 && s[3] > 0 && s[2].is_multiple_of(2) && s[3].is_multiple_of(2),
            "haar_forward needs positive even extents, got {}×{}",
            s[2],
            s[3]
        );
        let out = haar_forward_kernel(s, tx.data());
        let out = Tensor::new(&[s[0], 4 * s[1], s[2] / 2, s[3] / 2], out)?;
        self.push(out, Op::HaarFwd, &[x])
    }

    /// Exact inverse of [`Tape::haar_forward`].
    pub fn haar_inverse(&mut self, bands: Var) -> Result<Var> {
        let tb = self.value(bands);
        let s = tb.shape();
        ensure_dim!(
            s.len() == 4 && s[1].is_multiple_of(4),
            "haar_inverse expects N×4C×h×w, got {s:?}"
        );
        let out = haar_inverse_kernel(s, tb.data());
        let out = Tensor::new(&[s[0], s[1] / 4, 2 * s[2], 2 * s[3]], out)?;
        self.push(out, Op::HaarInv, &[bands])
    }

    /// Appends `ph` rows and `pw` columns by mirror reflection.
    pub fn reflect_pad_end(&mut self, x: Var, ph: usize, pw: usize) -> Result<Var> {
        let tx = self.value(x);
        let s = tx.shape();
        ensure_dim!(
            s.len() == 4 && s[2] > 0 && s[3] > 0,
            "reflect_pad_end expects non-empty N×C×H×W, got {s:?}"
        );
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let (oh, ow) = (h + ph, w + pw);
        let xd = tx.data();
        let mut out = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            for i in 0..oh {
                let si = reflect_index(i as isize, h);
                for j in 0..ow {
                    out.push(xd[(p * h + si) * w + reflect_index(j as isize, w)]);
                }
            }
        }
        let out = Tensor::new(&[s[0], s[1], oh, ow], out)?;
        self.push(out, Op::ReflectPadEnd { ph, pw }, &[x])
    }

    /// Per-plane 2-d Gaussian filter with reflect boundaries, realized as two
    /// separable passes with the normalized kernel from [`gaussian_kernel_1d`].
    pub fn gaussian_blur(&mut self, x: Var, sigma: f64) -> Result<Var> {
        let kernel = gaussian_kernel_1d::<T>(sigma)?;
        let tx = self.value(x);
        ensure_dim!(
            tx.ndim() == 4,
            "gaussian_blur expects N×C×H×W, got {:?}",
            tx.shape()
        );
        let tmp = blur_pass(tx.shape(), tx.data(), &kernel, true, false);
        let out = blur_pass(tx.shape(), &tmp, &kernel, false, false);
        let out = Tensor::new(tx.shape(), out)?;
        self.push(out, Op::GaussianBlur { kernel }, &[x])
    }

    /// Selective state-space recurrence, per batch `b` and channel `d`:
    ///
    /// `h_t = exp(Δ_t·A[d])⊙h_{t-1} + Δ_t·B_t·u_t`, `y_t = ⟨C_t, h_t⟩ + D[d]·u_t`, `h_0 = 0`.
    ///
    /// Shapes: `u`, `delta` B×L×D; `a` D×S (already negative); `b`, `c` B×L×S; `d` D.
    pub fn selective_scan(
        &mut self,
        u: Var,
        delta: Var,
        a: Var,
        b: Var,
        c: Var,
        d: Var,
    ) -> Result<Var> {
        let tu = self.value(u);
        let us = tu.shape().to_vec();
        ensure_dim!(
            us.len() == 3 && us[1] >= 1,
            "selective_scan input must be B×L×D with L ≥ 1, got {us:?}"
        );
        let (bn, ln, dn) = (us[0], us[1], us[2]);
        let ta = self.value(a);
        ensure_dim!(
            ta.ndim() == 2 && ta.shape()[0] == dn && ta.shape()[1] >= 1,
            "state matrix shape {:?} for D={dn}",
            ta.shape()
        );
        let sn = ta.shape()[1];
        ensure_dim!(
            self.shape(delta) == us.as_slice(),
            "delta shape {:?} != {us:?}",
            self.shape(delta)
        );
        ensure_dim!(
            self.shape(b) == [bn, ln, sn] && self.shape(c) == [bn, ln, sn],
            "B/C shapes {:?}/{:?}, expected [{bn}, {ln}, {sn}]",
            self.shape(b),
            self.shape(c)
        );
        ensure_dim!(
            self.shape(d) == [dn],
            "skip shape {:?}, expected [{dn}]",
            self.shape(d)
        );

        let (ud, dd, ad) = (tu.data(), self.value(delta).data(), ta.data());
        let (bd, cd, skd) = (
            self.value(b).data(),
            self.value(c).data(),
            self.value(d).data(),
        );
        let mut y = vec![T::zero(); tu.numel()];
        let mut states = vec![T::zero(); tu.numel() * sn];
        let mut h = vec![T::zero(); sn];
        for bi in 0..bn {
            for ch in 0..dn {
                h.iter_mut().for_each(|v| *v = T::zero());
                for t in 0..ln {
                    let ti = (bi * ln + t) * dn + ch;
                    let si = (bi * ln + t) * sn;
                    let (uv, dv) = (ud[ti], dd[ti]);
                    let mut acc = skd[ch] * uv;
                    for s in 0..sn {
                        h[s] = (dv * ad[ch * sn + s]).exp() * h[s] + dv * bd[si + s] * uv;
                        acc += cd[si + s] * h[s];
                    }
                    states[ti * sn..(ti + 1) * sn].copy_from_slice(&h);
                    y[ti] = acc;
                }
            }
        }
        let y = Tensor::new(&us, y)?;
        self.push(y, Op::SelectiveScan { states }, &[u, delta, a, b, c, d])
    }
}
