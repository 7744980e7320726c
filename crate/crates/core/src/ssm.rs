//! Selective state-space scan, four-direction 2-d scanning and the VSS block.

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{ensure_dim, Result};
use crate::layers::{Builder, Conv2d, LayerNorm, Linear};
use crate::params::ParamId;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Input-dependent (selective) state-space layer over B×L×D sequences.
///
/// `Δ = softplus(dt_proj(x_proj(u)[..R]))`, `B`, `C` are the remaining slices of
/// `x_proj(u)`, and `A = −exp(A_log)` keeps every mode decaying.
#[derive(Clone, Debug)]
pub struct S6 {
    pub x_proj: Linear,
    pub dt_proj: Linear,
    pub a_log: ParamId,
    pub d_skip: ParamId,
    pub dim: usize,
    pub state: usize,
    pub dt_rank: usize,
}

impl S6 {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, dim: usize, state: usize) -> Self {
        let dt_rank = (dim / 16).max(1);
        let mut b = b.sub(name);
        let x_proj = Linear::new(&mut b, "x_proj", dim, dt_rank + 2 * state, false);
        let dt_proj = Linear::new(&mut b, "dt_proj", dt_rank, dim, true);
        // Δ starts log-uniform in [1e-3, 1e-1]: store its inverse softplus as the bias.
        let (lo, hi) = (1e-3f64.ln(), 1e-1f64.ln());
        let dt_bias: Vec<f64> = (0..dim)
            .map(|_| {
                let dt = (lo + b.rng().gen::<f64>() * (hi - lo)).exp();
                dt + (-(-dt).exp_m1()).ln()
            })
            .collect();
        let bias_id = dt_proj.bias.expect("dt_proj has bias");
        *b.value_mut(bias_id) = Tensor::from_f64(&[dim], &dt_bias).expect("bias shape");
        let a_log = Tensor::from_fn(&[dim, state], |i| T::lit(((i % state) + 1) as f64).ln());
        let a_log = b.tensor("a_log", a_log);
        let d_skip = b.ones("d_skip", &[dim]);
        Self {
            x_proj,
            dt_proj,
            a_log,
            d_skip,
            dim,
            state,
            dt_rank,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, u: Var) -> Result<Var> {
        let s = tape.shape(u).to_vec();
        ensure_dim!(
            s.len() == 3 && s[2] == self.dim,
            "S6 expects B×L×{}, got {s:?}",
            self.dim
        );
        let proj = self.x_proj.forward(tape, u)?;
        let dt_in = tape.narrow(proj, 2, 0, self.dt_rank)?;
        let bm = tape.narrow(proj, 2, self.dt_rank, self.state)?;
        let cm = tape.narrow(proj, 2, self.dt_rank + self.state, self.state)?;
        let dt = self.dt_proj.forward(tape, dt_in)?;
        let delta = tape.softplus(dt)?;
        let a = self.state_matrix(tape)?;
        let d = tape.param(self.d_skip);
        tape.selective_scan(u, delta, a, bm, cm, d)
    }

    /// `A = −exp(A_log)`.
    pub fn state_matrix<T: Scalar>(&self, tape: &mut Tape<T>) -> Result<Var> {
        let a_log = tape.param(self.a_log);
        let e = tape.exp(a_log)?;
        tape.mul_scalar(e, -T::one())
    }
}

/// Scan orders over an H×W grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Row-major from the top-left corner.
    RowMajor,
    /// Row-major reversed, from the bottom-right corner.
    RowMajorReversed,
    /// Column-major from the top-left corner.
    ColumnMajor,
    /// Column-major reversed, from the bottom-right corner.
    ColumnMajorReversed,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::RowMajor,
        Direction::RowMajorReversed,
        Direction::ColumnMajor,
        Direction::ColumnMajorReversed,
    ];

    /// `positions[t]` is the row-major spatial offset visited at step `t`.
    pub fn positions(self, h: usize, w: usize) -> Vec<usize> {
        let l = h * w;
        let col_major = |t: usize| (t % h) * w + t / h;
        match self {
            Direction::RowMajor => (0..l).collect(),
            Direction::RowMajorReversed => (0..l).rev().collect(),
            Direction::ColumnMajor => (0..l).map(col_major).collect(),
            Direction::ColumnMajorReversed => (0..l).rev().map(col_major).collect(),
        }
    }

    fn inverse_positions(self, h: usize, w: usize) -> Vec<usize> {
        let pos = self.positions(h, w);
        let mut inv = vec![0; pos.len()];
        for (t, &p) in pos.iter().enumerate() {
            inv[p] = t;
        }
        inv
    }
}

/// Four directional views of an N×C×H×W map, stored as N×4×(H·W)×C in
/// [`Direction::ALL`] order.
#[derive(Clone, Copy, Debug)]
pub struct ScanBundle {
    pub seqs: Var,
    pub height: usize,
    pub width: usize,
}

impl ScanBundle {
    /// Sequence `k` as N×L×C.
    pub fn direction<T: Scalar>(&self, tape: &mut Tape<T>, k: usize) -> Result<Var> {
        let s = tape.shape(self.seqs).to_vec();
        let one = tape.narrow(self.seqs, 1, k, 1)?;
        tape.reshape(one, &[s[0], s[2], s[3]])
    }

    /// Stacks four N×L×C sequences in [`Direction::ALL`] order.
    pub fn from_directions<T: Scalar>(
        tape: &mut Tape<T>,
        seqs: [Var; 4],
        height: usize,
        width: usize,
    ) -> Result<Self> {
        let mut parts = Vec::with_capacity(4);
        for v in seqs {
            let s = tape.shape(v).to_vec();
            ensure_dim!(s.len() == 3, "scan sequence must be N×L×C, got {s:?}");
            parts.push(tape.reshape(v, &[s[0], 1, s[1], s[2]])?);
        }
        let seqs = tape.concat(&parts, 1)?;
        Ok(Self {
            seqs,
            height,
            width,
        })
    }
}

pub fn cross_scan<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<ScanBundle> {
    let s = tape.shape(x).to_vec();
    ensure_dim!(
        s.len() == 4 && s[2] >= 1 && s[3] >= 1,
        "cross_scan expects N×C×H×W, got {s:?}"
    );
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let l = h * w;
    let dirs: Vec<Vec<usize>> = Direction::ALL.iter().map(|d| d.positions(h, w)).collect();
    let mut index = Vec::with_capacity(n * 4 * l * c);
    for ni in 0..n {
        for pos in &dirs {
            for &p in pos {
                for ci in 0..c {
                    index.push((ni * c + ci) * l + p);
                }
            }
        }
    }
    let seqs = tape.gather(x, index, &[n, 4, l, c])?;
    Ok(ScanBundle {
        seqs,
        height: h,
        width: w,
    })
}

/// Un-permutes each direction back onto the grid and sums the four maps.
pub fn cross_merge<T: Scalar>(tape: &mut Tape<T>, b: &ScanBundle) -> Result<Var> {
    let s = tape.shape(b.seqs).to_vec();
    let (h, w) = (b.height, b.width);
    let l = h * w;
    ensure_dim!(
        s.len() == 4 && s[1] == 4 && s[2] == l,
        "scan bundle {s:?} does not hold four sequences of length {l}"
    );
    let (n, c) = (s[0], s[3]);
    let inv: Vec<Vec<usize>> = Direction::ALL
        .iter()
        .map(|d| d.inverse_positions(h, w))
        .collect();
    let mut index = Vec::with_capacity(n * 4 * c * l);
    for ni in 0..n {
        for (k, inv_k) in inv.iter().enumerate() {
            for ci in 0..c {
                for &t in inv_k {
                    index.push(((ni * 4 + k) * l + t) * c + ci);
                }
            }
        }
    }
    let grids = tape.gather(b.seqs, index, &[n, 4, c, h, w])?;
    tape.sum_axis(grids, 1, false)
}

/// Residual visual state-space block.
///
/// `x + out_proj(out_norm(SS2D(silu(dwconv(main)))) ⊙ silu(gate))`, where
/// `main`, `gate` split `in_proj(norm(x))`.
#[derive(Clone, Debug)]
pub struct VssBlock {
    pub norm: LayerNorm,
    pub in_proj: Linear,
    pub dwconv: Conv2d,
    pub scans: [S6; 4],
    pub out_norm: LayerNorm,
    pub out_proj: Linear,
    pub channels: usize,
}

impl VssBlock {
    pub fn new<T: Scalar>(
        b: &mut Builder<'_, T>,
        name: &str,
        channels: usize,
        state: usize,
    ) -> Self {
        let mut b = b.sub(name);
        let c = channels;
        let norm = LayerNorm::new(&mut b, "norm", c);
        let in_proj = Linear::new(&mut b, "in_proj", c, 2 * c, false);
        let dwconv = Conv2d::new(&mut b, "dwconv", c, c, 3, 1, 1, c, true);
        let scans = [0, 1, 2, 3].map(|k| S6::new(&mut b, &format!("scan{k}"), c, state));
        let out_norm = LayerNorm::new(&mut b, "out_norm", c);
        let out_proj = Linear::new(&mut b, "out_proj", c, c, false);
        Self {
            norm,
            in_proj,
            dwconv,
            scans,
            out_norm,
            out_proj,
            channels,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        ensure_dim!(
            s.len() == 4 && s[1] == self.channels,
            "VSS block expects N×{}×H×W, got {s:?}",
            self.channels
        );
        let c = self.channels;
        let nhwc = tape.permute(x, &[0, 2, 3, 1])?;
        let z = self.norm.forward(tape, nhwc)?;
        let xz = self.in_proj.forward(tape, z)?;
        let main = tape.narrow(xz, 3, 0, c)?;
        let gate = tape.narrow(xz, 3, c, c)?;

        let main = tape.permute(main, &[0, 3, 1, 2])?;
        let main = self.dwconv.forward(tape, main)?;
        let main = tape.silu(main)?;

        let bundle = cross_scan(tape, main)?;
        let mut ys = [bundle.seqs; 4];
        for (k, scan) in self.scans.iter().enumerate() {
            let u = bundle.direction(tape, k)?;
            ys[k] = scan.forward(tape, u)?;
        }
        let merged = ScanBundle::from_directions(tape, ys, bundle.height, bundle.width)?;
        let y = cross_merge(tape, &merged)?;

        let y = tape.permute(y, &[0, 2, 3, 1])?;
        let y = self.out_norm.forward(tape, y)?;
        let g = tape.silu(gate)?;
        let y = tape.mul(y, g)?;
        let y = self.out_proj.forward(tape, y)?;
        let y = tape.permute(y, &[0, 3, 1, 2])?;
        tape.add(x, y)
    }
}

/// Resolution changes between U-net stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResampleKind {
    /// 4×4 stride-4 conv to C channels, then channel LayerNorm.
    PatchEmbed4,
    /// 2×2 stride-2 conv doubling channels.
    Down2,
    /// Bilinear ×2 and 1×1 conv halving channels.
    Up2,
    /// Bilinear ×4 and 1×1 conv to a single logit channel.
    FinalExpand4,
}

#[derive(Clone, Debug)]
pub struct StageResample {
    pub kind: ResampleKind,
    pub conv: Conv2d,
    pub norm: Option<LayerNorm>,
}

impl StageResample {
    /// `in_ch` is the input channel count; the output count follows from `kind`
    /// except for [`ResampleKind::PatchEmbed4`], which maps to `out_ch`.
    pub fn new<T: Scalar>(
        b: &mut Builder<'_, T>,
        name: &str,
        kind: ResampleKind,
        in_ch: usize,
        out_ch: usize,
    ) -> Self {
        let mut b = b.sub(name);
        let (conv, norm) = match kind {
            ResampleKind::PatchEmbed4 => (
                Conv2d::new(&mut b, "proj", in_ch, out_ch, 4, 4, 0, 1, true),
                Some(LayerNorm::new(&mut b, "norm", out_ch)),
            ),
            ResampleKind::Down2 => (
                Conv2d::new(&mut b, "proj", in_ch, 2 * in_ch, 2, 2, 0, 1, true),
                None,
            ),
            ResampleKind::Up2 => (Conv2d::pointwise(&mut b, "proj", in_ch, in_ch / 2), None),
            ResampleKind::FinalExpand4 => (Conv2d::pointwise(&mut b, "proj", in_ch, 1), None),
        };
        Self { kind, conv, norm }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        ensure_dim!(s.len() == 4, "resample expects N×C×H×W, got {s:?}");
        match self.kind {
            ResampleKind::PatchEmbed4 | ResampleKind::Down2 => {
                let f = if self.kind == ResampleKind::PatchEmbed4 {
                    4
                } else {
                    2
                };
                ensure_dim!(
                    s[2].is_multiple_of(f) && s[3].is_multiple_of(f) && s[2] > 0 && s[3] > 0,
                    "{:?} needs extents divisible by {f}, got {}×{}",
                    self.kind,
                    s[2],
                    s[3]
                );
                let y = self.conv.forward(tape, x)?;
                match &self.norm {
                    Some(n) => n.forward_channels(tape, y),
                    None => Ok(y),
                }
            }
            ResampleKind::Up2 | ResampleKind::FinalExpand4 => {
                let f = if self.kind == ResampleKind::Up2 { 2 } else { 4 };
                // A 1×1 conv commutes with bilinear resampling (weights sum to one),
                // so project at the lower resolution.
                let y = self.conv.forward(tape, x)?;
                tape.upsample_bilinear(y, f)
            }
        }
    }
}
