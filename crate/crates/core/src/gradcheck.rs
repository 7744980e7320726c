//! Central finite-difference checks of tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// `‖a − n‖∞ / max(‖a‖∞, ‖n‖∞)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Contracts `v` with fixed random weights in `[-1, 1]` so every output
/// element contributes a distinct factor to the scalar loss.
pub fn weighted_sum(tape: &mut Tape<f64>, v: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(v).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(Tensor::rand_uniform(&shape, -1.0, 1.0, &mut rng))?;
    let p = tape.mul(v, w)?;
    tape.sum(p)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// One relative error per input tensor.
    pub inputs: Vec<f64>,
    /// Relative error over all probed parameter entries.
    pub params: f64,
    pub probes: usize,
}

impl GradCheck {
    pub fn max_error(&self) -> f64 {
        self.inputs.iter().copied().fold(self.params, f64::max)
    }
}

/// Flat indices probed in a tensor of `n` entries: all of them when
/// `limit ≥ n`, else a seeded sample of `limit`.
fn probe_indices(n: usize, limit: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if limit >= n {
        (0..n).collect()
    } else {
        (0..limit).map(|_| rng.gen_range(0..n)).collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CheckOptions<'a> {
    pub h: f64,
    /// Entries probed per tensor; smaller tensors are probed exhaustively.
    pub max_probes: usize,
    pub seed: u64,
    /// Only parameters whose names start with one of these are probed;
    /// empty probes every parameter.
    pub param_prefixes: &'a [&'a str],
}

impl Default for CheckOptions<'_> {
    fn default() -> Self {
        Self {
            h: DEFAULT_STEP,
            max_probes: usize::MAX,
            seed: 0,
            param_prefixes: &[],
        }
    }
}

/// Compares backward gradients of `f` with central differences for each
/// input tensor and the selected parameters of `store`.
pub fn check<F>(
    store: &mut ParamStore<f64>,
    inputs: &[Tensor<f64>],
    opts: CheckOptions<'_>,
    f: F,
) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let (h, max_probes) = (opts.h, opts.max_probes);
    let eval = |store: &ParamStore<f64>, xs: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::with_params(store, false);
        let vars = xs
            .iter()
            .map(|x| tape.constant(x.clone()))
            .collect::<Result<Vec<_>>>()?;
        let loss = f(&mut tape, &vars)?;
        scalar(&tape, loss)
    };

    let mut tape = Tape::with_params(store, true);
    let vars = inputs
        .iter()
        .map(|x| tape.leaf(x.clone(), true))
        .collect::<Result<Vec<_>>>()?;
    let loss = f(&mut tape, &vars)?;
    scalar(&tape, loss)?;
    tape.backward(loss)?;
    let input_grads: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, x)| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(x.shape()))
        })
        .collect();
    store.collect_grads(&mut tape)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probes = 0;
    let mut xs = inputs.to_vec();
    let mut input_errors = Vec::with_capacity(inputs.len());
    for (k, g) in input_grads.iter().enumerate() {
        let (mut a, mut n) = (Vec::new(), Vec::new());
        for i in probe_indices(xs[k].numel(), max_probes, &mut rng) {
            let orig = xs[k].data()[i];
            xs[k].data_mut()[i] = orig + h;
            let plus = eval(store, &xs)?;
            xs[k].data_mut()[i] = orig - h;
            let minus = eval(store, &xs)?;
            xs[k].data_mut()[i] = orig;
            a.push(g.data()[i]);
            n.push((plus - minus) / (2.0 * h));
            probes += 1;
        }
        input_errors.push(relative_error(&a, &n));
    }

    let (mut a, mut n) = (Vec::new(), Vec::new());
    let ids: Vec<_> = store
        .ids()
        .filter(|&id| {
            let name = &store.get(id).name;
            opts.param_prefixes.is_empty()
                || opts.param_prefixes.iter().any(|p| name.starts_with(p))
        })
        .collect();
    for id in ids {
        let grad = store
            .get(id)
            .grad
            .clone()
            .unwrap_or_else(|| Tensor::zeros(store.get(id).value.shape()));
        for i in probe_indices(grad.numel(), max_probes, &mut rng) {
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + h;
            let plus = eval(store, &xs)?;
            store.get_mut(id).value.data_mut()[i] = orig - h;
            let minus = eval(store, &xs)?;
            store.get_mut(id).value.data_mut()[i] = orig;
            a.push(grad.data()[i]);
            n.push((plus - minus) / (2.0 * h));
            probes += 1;
        }
    }
    store.zero_grads();
    Ok(GradCheck {
        inputs: input_errors,
        params: relative_error(&a, &n),
        probes,
    })
}

fn scalar(tape: &Tape<f64>, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if t.numel() != 1 {
        return Err(Error::Contract(format!(
            "gradient check needs a scalar loss, got {:?}",
            t.shape()
        )));
    }
    Ok(t.item())
}
