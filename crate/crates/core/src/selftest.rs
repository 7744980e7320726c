//! Quick built-in consistency checks run by the `selftest` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::Tape;
use crate::error::Result;
use crate::gradcheck::{self, CheckOptions};
use crate::layers::Builder;
use crate::metrics::{hd95, percentile_sorted, Mask};
use crate::params::ParamStore;
use crate::ssm::{cross_merge, cross_scan, VssBlock};
use crate::tensor::Tensor;
use crate::wavelet::{dwt_haar, idwt_haar};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn result(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        name,
        passed,
        detail,
    }
}

pub fn run_all(seed: u64) -> Result<Vec<CheckResult>> {
    Ok(vec![
        wavelet_round_trip(seed)?,
        scan_identity(seed)?,
        scan_recurrence(seed)?,
        conv_gradient(seed)?,
        vss_gradient(seed)?,
        hd95_oracle(seed)?,
    ])
}

fn wavelet_round_trip(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::rand_uniform(&[2, 3, 8, 10], -1.0, 1.0, &mut rng);
    let mut tape = Tape::<f64>::new();
    let xv = tape.constant(x.clone())?;
    let bands = dwt_haar(&mut tape, xv)?;
    let energy: f64 = bands.bands().iter().map(|&b| tape.value(b).sum_sq()).sum();
    let y = idwt_haar(&mut tape, &bands)?;
    let err = tape.value(y).max_abs_diff(&x);
    let e_err = (energy - x.sum_sq()).abs();
    Ok(result(
        "wavelet round trip",
        err < 1e-12 && e_err < 1e-9,
        format!("reconstruction {err:.2e}, energy {e_err:.2e}"),
    ))
}

fn scan_identity(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::rand_uniform(&[2, 3, 5, 7], -1.0, 1.0, &mut rng);
    let mut tape = Tape::<f64>::new();
    let xv = tape.constant(x.clone())?;
    let b = cross_scan(&mut tape, xv)?;
    let y = cross_merge(&mut tape, &b)?;
    let ok = tape
        .value(y)
        .data()
        .iter()
        .zip(x.data())
        .all(|(a, b)| *a == 4.0 * b);
    Ok(result(
        "cross-scan merge identity",
        ok,
        "merge(scan(x)) = 4x".into(),
    ))
}

/// Step-by-step recurrence for one sequence (L×D inputs, D×S state matrix).
#[allow(clippy::too_many_arguments)]
fn naive_scan(
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
                h[k] = (dt[t * d + di] * a[k]).exp() * h[k]
                    + dt[t * d + di] * b[t * s + si] * u[t * d + di];
                acc += c[t * s + si] * h[k];
            }
            y[t * d + di] = acc + skip[di] * u[t * d + di];
        }
    }
    y
}

fn scan_recurrence(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (l, d, s) = (16, 3, 4);
    let u = Tensor::rand_uniform(&[1, l, d], -1.0, 1.0, &mut rng);
    let dt = Tensor::rand_uniform(&[1, l, d], 0.01, 0.5, &mut rng);
    let a = Tensor::rand_uniform(&[d, s], -2.0, -0.1, &mut rng);
    let b = Tensor::rand_uniform(&[1, l, s], -1.0, 1.0, &mut rng);
    let c = Tensor::rand_uniform(&[1, l, s], -1.0, 1.0, &mut rng);
    let skip = Tensor::rand_uniform(&[d], -1.0, 1.0, &mut rng);
    let expect = naive_scan(
        l,
        d,
        s,
        u.data(),
        dt.data(),
        a.data(),
        b.data(),
        c.data(),
        skip.data(),
    );
    let mut tape = Tape::<f64>::new();
    let vars = [&u, &dt, &a, &b, &c, &skip].map(|t| tape.constant(t.clone()));
    let [u, dt, a, b, c, skip] = vars;
    let y = tape.selective_scan(u?, dt?, a?, b?, c?, skip?)?;
    let err = tape
        .value(y)
        .data()
        .iter()
        .zip(&expect)
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max);
    Ok(result(
        "selective scan recurrence",
        err < 1e-10,
        format!("max deviation {err:.2e}"),
    ))
}

fn conv_gradient(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::rand_uniform(&[1, 2, 5, 5], -1.0, 1.0, &mut rng);
    let w = Tensor::rand_uniform(&[3, 2, 3, 3], -1.0, 1.0, &mut rng);
    let mut store = ParamStore::new();
    let r = gradcheck::check(&mut store, &[x, w], CheckOptions::default(), |t, v| {
        let y = t.conv2d(v[0], v[1], None, 1, 1, 1)?;
        gradcheck::weighted_sum(t, y, 1)
    })?;
    let e = r.max_error();
    Ok(result(
        "conv2d gradient",
        e < 1e-4,
        format!("relative error {e:.2e}"),
    ))
}

fn vss_gradient(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let block = {
        let mut b = Builder::new(&mut store, &mut rng);
        VssBlock::new(&mut b, "vss", 4, 2)
    };
    let x = Tensor::rand_uniform(&[1, 4, 4, 4], -1.0, 1.0, &mut rng);
    let opts = CheckOptions {
        max_probes: 4,
        seed,
        ..CheckOptions::default()
    };
    let r = gradcheck::check(&mut store, &[x], opts, |t, v| {
        let y = block.forward(t, v[0])?;
        gradcheck::weighted_sum(t, y, 2)
    })?;
    let e = r.max_error();
    Ok(result(
        "VSS block gradient",
        e < 1e-4,
        format!("relative error {e:.2e} over {} probes", r.probes),
    ))
}

fn brute_directed(a: &[(usize, usize)], b: &[(usize, usize)]) -> f64 {
    let mut d: Vec<f64> = a
        .iter()
        .map(|&(i, j)| {
            b.iter()
                .map(|&(p, q)| ((i.abs_diff(p).pow(2) + j.abs_diff(q).pow(2)) as f64).sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    d.sort_by(f64::total_cmp);
    percentile_sorted(&d, 0.95)
}

fn hd95_oracle(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (h, w) = (rng.gen_range(2..=24), rng.gen_range(2..=24));
        let mut gen = |p: f64| {
            Mask::new(
                h,
                w,
                (0..h * w).map(|_| u8::from(rng.gen_bool(p))).collect(),
            )
        };
        let (a, b) = (gen(0.3)?, gen(0.3)?);
        if a.is_empty() || b.is_empty() {
            continue;
        }
        let (ba, bb) = (a.boundary(), b.boundary());
        let brute = brute_directed(&ba, &bb).max(brute_directed(&bb, &ba));
        worst = worst.max((hd95(&a, &b)?.value - brute).abs());
    }
    Ok(result(
        "HD95 brute-force oracle",
        worst == 0.0,
        format!("max deviation {worst:.2e}"),
    ))
}
