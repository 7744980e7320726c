use super::op::Op;
use super::{Tape, Var};
use crate::error::{ensure_dim, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{numel, strides, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(super) enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

impl Binary {
    pub(super) fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        }
    }
}

/// Pointwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Sigmoid,
    Silu,
    Relu,
    Exp,
    /// Natural log; strictly positive input required.
    Log,
    Softplus,
}

impl Unary {
    pub(super) fn name(self) -> &'static str {
        match self {
            Unary::Sigmoid => "sigmoid",
            Unary::Silu => "silu",
            Unary::Relu => "relu",
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Softplus => "softplus",
        }
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    if x > T::lit(30.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    ensure_dim!(
        a.len() == b.len(),
        "broadcast needs equal rank, got {:?} and {:?}",
        a,
        b
    );
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(Error::Dimension(format!(
                "shapes {a:?} and {b:?} are not broadcast-compatible"
            ))),
        })
        .collect()
}

/// Strides of `shape` viewed inside `out`, with 0 on expanded axes.
fn expanded_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    strides(shape)
        .into_iter()
        .zip(shape.iter().zip(out))
        .map(|(s, (&d, &o))| if d == 1 && o != 1 { 0 } else { s })
        .collect()
}

/// Row-major walk over `shape` yielding the output position plus two offsets.
fn for_each2(shape: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let total = numel(shape);
    if total == 0 {
        return;
    }
    let nd = shape.len();
    let mut idx = vec![0usize; nd];
    let (mut oa, mut ob) = (0usize, 0usize);
    for o in 0..total {
        f(o, oa, ob);
        for ax in (0..nd).rev() {
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            oa -= sa[ax] * shape[ax];
            ob -= sb[ax] * shape[ax];
            idx[ax] = 0;
        }
    }
}

pub(super) fn binary_backward<T: Scalar>(
    kind: Binary,
    inputs: &[&Tensor<T>],
    g: &[T],
    need: &[bool],
) -> Vec<Option<Vec<T>>> {
    let (a, b) = (inputs[0], inputs[1]);
    let out = broadcast_shape(a.shape(), b.shape()).expect("validated in forward");
    let mut ga = need[0].then(|| vec![T::zero(); a.numel()]);
    let mut gb = need[1].then(|| vec![T::zero(); b.numel()]);
    if a.shape() == b.shape() {
        let (ad, bd) = (a.data(), b.data());
        for i in 0..g.len() {
            let (da, db) = local_partials(kind, ad[i], bd[i]);
            if let Some(ga) = ga.as_mut() {
                ga[i] += g[i] * da;
            }
            if let Some(gb) = gb.as_mut() {
                gb[i] += g[i] * db;
            }
        }
    } else {
        let sa = expanded_strides(a.shape(), &out);
        let sb = expanded_strides(b.shape(), &out);
        let (ad, bd) = (a.data(), b.data());
        for_each2(&out, &sa, &sb, |o, ia, ib| {
            let (da, db) = local_partials(kind, ad[ia], bd[ib]);
            if let Some(ga) = ga.as_mut() {
                ga[ia] += g[o] * da;
            }
            if let Some(gb) = gb.as_mut() {
                gb[ib] += g[o] * db;
            }
        });
    }
    vec![ga, gb]
}

#[inline]
fn local_partials<T: Scalar>(kind: Binary, a: T, b: T) -> (T, T) {
    match kind {
        Binary::Add => (T::one(), T::one()),
        Binary::Sub => (T::one(), -T::one()),
        Binary::Mul => (b, a),
        Binary::Div => (T::one() / b, -a / (b * b)),
    }
}

pub(super) fn unary_backward<T: Scalar>(
    kind: Unary,
    x: &Tensor<T>,
    y: &Tensor<T>,
    g: &[T],
) -> Vec<T> {
    let (xd, yd) = (x.data(), y.data());
    (0..g.len())
        .map(|i| {
            let d = match kind {
                Unary::Sigmoid => yd[i] * (T::one() - yd[i]),
                Unary::Silu => {
                    let s = sigmoid(xd[i]);
                    s + xd[i] * s * (T::one() - s)
                }
                Unary::Relu => {
                    if xd[i] > T::zero() {
                        T::one()
                    } else {
                        T::zero()
                    }
                }
                Unary::Exp => yd[i],
                Unary::Log => T::one() / xd[i],
                Unary::Softplus => sigmoid(xd[i]),
            };
            g[i] * d
        })
        .collect()
}

pub(super) fn clamp_backward<T: Scalar>(x: &Tensor<T>, lo: T, hi: T, g: &[T]) -> Vec<T> {
    x.data()
        .iter()
        .zip(g)
        .map(|(&v, &gv)| if v < lo || v > hi { T::zero() } else { gv })
        .collect()
}

/// (outer, len, inner) decomposition of `shape` around `axis`.
pub(super) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

pub(super) fn softmax_backward<T: Scalar>(y: &Tensor<T>, axis: usize, g: &[T]) -> Vec<T> {
    let (outer, len, inner) = axis_split(y.shape(), axis);
    let yd = y.data();
    let mut gx = vec![T::zero(); yd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let dot: T = (0..len)
                .map(|k| g[base + k * inner] * yd[base + k * inner])
                .sum();
            for k in 0..len {
                let p = base + k * inner;
                gx[p] = yd[p] * (g[p] - dot);
            }
        }
    }
    gx
}

impl<T: Scalar> Tape<T> {
    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out_shape = broadcast_shape(ta.shape(), tb.shape())?;
        let f = |x: T, y: T| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        let data: Vec<T> = if ta.shape() == tb.shape() {
            ta.data()
                .iter()
                .zip(tb.data())
                .map(|(&x, &y)| f(x, y))
                .collect()
        } else {
            let sa = expanded_strides(ta.shape(), &out_shape);
            let sb = expanded_strides(tb.shape(), &out_shape);
            let (ad, bd) = (ta.data(), tb.data());
            let mut data = Vec::with_capacity(numel(&out_shape));
            for_each2(&out_shape, &sa, &sb, |_, ia, ib| {
                data.push(f(ad[ia], bd[ib]))
            });
            data
        };
        self.push(Tensor::new(&out_shape, data)?, Op::Binary(kind), &[a, b])
    }

    /// Elementwise sum; singleton axes broadcast.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    /// Elementwise product; singleton axes broadcast.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Result<Var> {
        let out = self.value(x).map(|v| v + c);
        self.push(out, Op::AddScalar, &[x])
    }

    pub fn mul_scalar(&mut self, x: Var, c: T) -> Result<Var> {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::MulScalar(c), &[x])
    }

    pub fn unary(&mut self, x: Var, kind: Unary) -> Result<Var> {
        let tx = self.value(x);
        if kind == Unary::Log {
            if let Some(bad) = tx.data().iter().find(|&&v| v <= T::zero()) {
                return Err(Error::Numeric(format!("log of non-positive value {bad}")));
            }
        }
        let out = tx.map(|v| match kind {
            Unary::Sigmoid => sigmoid(v),
            Unary::Silu => v * sigmoid(v),
            Unary::Relu => v.max(T::zero()),
            Unary::Exp => v.exp(),
            Unary::Log => v.ln(),
            Unary::Softplus => softplus(v),
        });
        self.push(out, Op::Unary(kind), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Silu)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Relu)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Exp)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Log)
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Softplus)
    }

    /// Clips into `[lo, hi]`; the gradient is zero where clipping is active.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(lo).min(hi));
        self.push(out, Op::Clamp { lo, hi }, &[x])
    }

    /// Softmax along `axis` (max-shifted for stability).
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let tx = self.value(x);
        ensure_dim!(
            axis < tx.ndim(),
            "softmax axis {axis} for shape {:?}",
            tx.shape()
        );
        let (outer, len, inner) = axis_split(tx.shape(), axis);
        let xd = tx.data();
        let mut out = vec![T::zero(); xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let m = (0..len).fold(T::neg_infinity(), |m, k| m.max(xd[base + k * inner]));
                let mut z = T::zero();
                for k in 0..len {
                    let e = (xd[base + k * inner] - m).exp();
                    out[base + k * inner] = e;
                    z += e;
                }
                for k in 0..len {
                    out[base + k * inner] /= z;
                }
            }
        }
        let out = Tensor::new(tx.shape(), out)?;
        self.push(out, Op::Softmax { axis }, &[x])
    }
}
