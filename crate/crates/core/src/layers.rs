//! Parameterized building blocks shared by the network modules.

use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::params::{kaiming_uniform, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Creates named parameters under a dotted prefix.
pub struct Builder<'a, T: Scalar> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a, T: Scalar> Builder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn sub(&mut self, name: &str) -> Builder<'_, T> {
        Builder {
            prefix: self.qualify(name),
            store: self.store,
            rng: self.rng,
        }
    }

    fn qualify(&self, leaf: &str) -> String {
        if self.prefix.is_empty() {
            leaf.to_string()
        } else {
            format!("{}.{leaf}", self.prefix)
        }
    }

    pub fn kaiming(&mut self, leaf: &str, shape: &[usize], fan_in: usize) -> ParamId {
        let t = kaiming_uniform(shape, fan_in, self.rng);
        self.store.add(self.qualify(leaf), t)
    }

    pub fn zeros(&mut self, leaf: &str, shape: &[usize]) -> ParamId {
        self.store.add(self.qualify(leaf), Tensor::zeros(shape))
    }

    pub fn ones(&mut self, leaf: &str, shape: &[usize]) -> ParamId {
        self.store.add(self.qualify(leaf), Tensor::ones(shape))
    }

    pub fn tensor(&mut self, leaf: &str, t: Tensor<T>) -> ParamId {
        self.store.add(self.qualify(leaf), t)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        self.rng
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.store.get_mut(id).value
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        b: &mut Builder<'_, T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        groups: usize,
        bias: bool,
    ) -> Self {
        let mut b = b.sub(name);
        let fan_in = in_ch / groups * kernel * kernel;
        let weight = b.kaiming("weight", &[out_ch, in_ch / groups, kernel, kernel], fan_in);
        let bias = bias.then(|| b.zeros("bias", &[out_ch]));
        Self {
            weight,
            bias,
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
            groups,
        }
    }

    /// Pointwise (1×1) convolution with bias.
    pub fn pointwise<T: Scalar>(
        b: &mut Builder<'_, T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
    ) -> Self {
        Self::new(b, name, in_ch, out_ch, 1, 1, 0, 1, true)
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let w = tape.param(self.weight);
        let b = self.bias.map(|id| tape.param(id));
        tape.conv2d(x, w, b, self.stride, self.pad, self.groups)
    }

    pub fn param_count(&self) -> usize {
        self.out_ch * (self.in_ch / self.groups) * self.kernel * self.kernel
            + if self.bias.is_some() { self.out_ch } else { 0 }
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Scalar>(
        b: &mut Builder<'_, T>,
        name: &str,
        in_f: usize,
        out_f: usize,
        bias: bool,
    ) -> Self {
        let mut b = b.sub(name);
        let weight = b.kaiming("weight", &[out_f, in_f], in_f);
        let bias = bias.then(|| b.zeros("bias", &[out_f]));
        Self { weight, bias }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let w = tape.param(self.weight);
        let b = self.bias.map(|id| tape.param(id));
        tape.linear(x, w, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, dim: usize) -> Self {
        let mut b = b.sub(name);
        Self {
            gamma: b.ones("weight", &[dim]),
            beta: b.zeros("bias", &[dim]),
        }
    }

    /// Normalizes the last axis.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let (g, b) = (tape.param(self.gamma), tape.param(self.beta));
        tape.layer_norm(x, g, b, T::lit(LAYER_NORM_EPS))
    }

    /// Normalizes the channel axis of an N×C×H×W map.
    pub fn forward_channels<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let nhwc = tape.permute(x, &[0, 2, 3, 1])?;
        let y = self.forward(tape, nhwc)?;
        tape.permute(y, &[0, 3, 1, 2])
    }
}
