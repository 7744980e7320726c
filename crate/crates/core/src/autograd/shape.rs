use super::elementwise::axis_split;
use super::op::Op;
use super::{Tape, Var};
use crate::error::{ensure_dim, Result};
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

pub(super) fn sum_axis_backward<T: Scalar>(x: &Tensor<T>, axis: usize, g: &[T]) -> Vec<T> {
    let (outer, len, inner) = axis_split(x.shape(), axis);
    let mut gx = vec![T::zero(); x.numel()];
    for o in 0..outer {
        for k in 0..len {
            let dst = (o * len + k) * inner;
            gx[dst..dst + inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
        }
    }
    gx
}

pub(super) fn scatter_argmax<T: Scalar>(n: usize, argmax: &[usize], g: &[T]) -> Vec<T> {
    let mut gx = vec![T::zero(); n];
    for (&src, &gv) in argmax.iter().zip(g) {
        gx[src] += gv;
    }
    gx
}

pub(super) fn permute_backward<T: Scalar>(out_shape: &[usize], perm: &[usize], g: &[T]) -> Vec<T> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    let gt = Tensor::new(out_shape, g.to_vec()).expect("gradient matches output");
    gt.permute(&inv).expect("valid inverse").into_data()
}

pub(super) fn concat_backward<T: Scalar>(
    inputs: &[&Tensor<T>],
    axis: usize,
    g: &[T],
) -> Vec<Option<Vec<T>>> {
    let outer: usize = inputs[0].shape()[..axis].iter().product();
    let inner: usize = inputs[0].shape()[axis + 1..].iter().product();
    let total_len: usize = inputs.iter().map(|t| t.shape()[axis]).sum();
    let mut grads = Vec::with_capacity(inputs.len());
    let mut offset = 0;
    for t in inputs {
        let len = t.shape()[axis];
        let mut gx = Vec::with_capacity(t.numel());
        for o in 0..outer {
            let src = (o * total_len + offset) * inner;
            gx.extend_from_slice(&g[src..src + len * inner]);
        }
        offset += len;
        grads.push(Some(gx));
    }
    grads
}

pub(super) fn narrow_backward<T: Scalar>(
    in_shape: &[usize],
    axis: usize,
    start: usize,
    out_shape: &[usize],
    g: &[T],
) -> Vec<T> {
    let (outer, full, inner) = axis_split(in_shape, axis);
    let len = out_shape[axis];
    let mut gx = vec![T::zero(); numel(in_shape)];
    for o in 0..outer {
        let dst = (o * full + start) * inner;
        let src = o * len * inner;
        gx[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
    }
    gx
}

pub(super) fn gather_backward<T: Scalar>(n: usize, index: &[usize], g: &[T]) -> Vec<T> {
    scatter_argmax(n, index, g)
}

impl<T: Scalar> Tape<T> {
    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        let s = self.sum(x)?;
        self.mul_scalar(s, T::one() / T::lit(n as f64))
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize, keepdim: bool) -> Result<Var> {
        let tx = self.value(x);
        ensure_dim!(
            axis < tx.ndim(),
            "axis {axis} out of range for {:?}",
            tx.shape()
        );
        let (outer, len, inner) = axis_split(tx.shape(), axis);
        let xd = tx.data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let src = (o * len + k) * inner;
                for i in 0..inner {
                    out[o * inner + i] += xd[src + i];
                }
            }
        }
        let shape = reduced_shape(tx.shape(), axis, keepdim);
        self.push(Tensor::new(&shape, out)?, Op::SumAxis { axis }, &[x])
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize, keepdim: bool) -> Result<Var> {
        let len = *self
            .shape(x)
            .get(axis)
            .ok_or_else(|| crate::error::dim_err!("axis {axis} out of range"))?;
        let s = self.sum_axis(x, axis, keepdim)?;
        self.mul_scalar(s, T::one() / T::lit(len as f64))
    }

    /// Maximum along `axis`; ties resolve to the first occurrence.
    pub fn max_axis(&mut self, x: Var, axis: usize, keepdim: bool) -> Result<Var> {
        let tx = self.value(x);
        ensure_dim!(
            axis < tx.ndim(),
            "axis {axis} out of range for {:?}",
            tx.shape()
        );
        let (outer, len, inner) = axis_split(tx.shape(), axis);
        ensure_dim!(len > 0, "max over empty axis");
        let xd = tx.data();
        let mut out = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut best = base;
                for k in 1..len {
                    let p = base + k * inner;
                    if xd[p] > xd[best] {
                        best = p;
                    }
                }
                out.push(xd[best]);
                argmax.push(best);
            }
        }
        let shape = reduced_shape(tx.shape(), axis, keepdim);
        self.push(Tensor::new(&shape, out)?, Op::MaxAxis { argmax }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        self.push(out, Op::Reshape, &[x])
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let out = self.value(x).permute(perm)?;
        self.push(
            out,
            Op::Permute {
                perm: perm.to_vec(),
            },
            &[x],
        )
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        ensure_dim!(!xs.is_empty(), "concat of nothing");
        let first = self.shape(xs[0]).to_vec();
        ensure_dim!(
            axis < first.len(),
            "concat axis {axis} for rank {}",
            first.len()
        );
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            ensure_dim!(
                s.len() == first.len()
                    && s.iter()
                        .zip(&first)
                        .enumerate()
                        .all(|(i, (a, b))| i == axis || a == b),
                "concat shapes {:?} and {:?} differ off axis {axis}",
                first,
                s
            );
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        self.push(Tensor::new(&shape, data)?, Op::Concat { axis }, xs)
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        ensure_dim!(axis < tx.ndim(), "narrow axis {axis} for {:?}", tx.shape());
        ensure_dim!(
            start + len <= tx.shape()[axis],
            "narrow [{start}, {}) exceeds extent {} of {:?}",
            start + len,
            tx.shape()[axis],
            tx.shape()
        );
        let (outer, full, inner) = axis_split(tx.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let src = (o * full + start) * inner;
            data.extend_from_slice(&tx.data()[src..src + len * inner]);
        }
        let mut shape = tx.shape().to_vec();
        shape[axis] = len;
        self.push(Tensor::new(&shape, data)?, Op::Narrow { axis, start }, &[x])
    }

    /// `out[i] = x[index[i]]` over flat buffers; gradient scatters back.
    pub fn gather(&mut self, x: Var, index: Vec<usize>, out_shape: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        ensure_dim!(
            index.len() == numel(out_shape),
            "gather index length {} for output {:?}",
            index.len(),
            out_shape
        );
        ensure_dim!(
            index.iter().all(|&i| i < tx.numel()),
            "gather index out of range"
        );
        let data = index.iter().map(|&i| tx.data()[i]).collect();
        self.push(Tensor::new(out_shape, data)?, Op::Gather { index }, &[x])
    }
}

fn reduced_shape(shape: &[usize], axis: usize, keepdim: bool) -> Vec<usize> {
    let mut s = shape.to_vec();
    if keepdim {
        s[axis] = 1;
    } else {
        s.remove(axis);
        if s.is_empty() {
            s.push(1);
        }
    }
    s
}
