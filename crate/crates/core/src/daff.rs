//! Dual attention feature fusion: bottleneck channel attention on deep
//! features, wavelet-convolution spatial attention on shallow features, and
//! their multiplicative fusion. A conventional CBAM is kept alongside for
//! parameter comparisons.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{PoolKind, Tape, Var};
use crate::error::{ensure_dim, Error, Result};
use crate::layers::{Builder, Conv2d, Linear};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::wavelet::WtConv7;

pub const DEFAULT_REDUCTION: usize = 16;

fn bottleneck(channels: usize, reduction: usize) -> Result<usize> {
    if reduction == 0 || !channels.is_multiple_of(reduction) {
        return Err(Error::Config(format!(
            "reduction ratio {reduction} does not divide {channels} channels"
        )));
    }
    Ok(channels / reduction)
}

/// `M_c = σ(P(GAP(x)) + P(GMP(x)))` with a shared bias-free 1×1-conv bottleneck `P`.
#[derive(Clone, Debug)]
pub struct ChannelAttention {
    pub reduce: Conv2d,
    pub expand: Conv2d,
    pub channels: usize,
}

impl ChannelAttention {
    pub fn new<T: Scalar>(
        b: &mut Builder<'_, T>,
        name: &str,
        channels: usize,
        reduction: usize,
    ) -> Result<Self> {
        let hidden = bottleneck(channels, reduction)?;
        let mut b = b.sub(name);
        Ok(Self {
            reduce: Conv2d::new(&mut b, "reduce", channels, hidden, 1, 1, 0, 1, false),
            expand: Conv2d::new(&mut b, "expand", hidden, channels, 1, 1, 0, 1, false),
            channels,
        })
    }

    fn path<T: Scalar>(&self, tape: &mut Tape<T>, z: Var) -> Result<Var> {
        let h = self.reduce.forward(tape, z)?;
        let h = tape.relu(h)?;
        self.expand.forward(tape, h)
    }

    /// N×C×h×w → N×C×1×1.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        ensure_dim!(
            s.len() == 4 && s[1] == self.channels,
            "channel attention expects N×{}×H×W, got {s:?}",
            self.channels
        );
        let avg = tape.pool2d(x, PoolKind::GlobalAvg, 0, 0)?;
        let max = tape.pool2d(x, PoolKind::GlobalMax, 0, 0)?;
        let pa = self.path(tape, avg)?;
        let pm = self.path(tape, max)?;
        let sum = tape.add(pa, pm)?;
        tape.sigmoid(sum)
    }

    pub fn param_count(&self) -> usize {
        self.reduce.param_count() + self.expand.param_count()
    }
}

/// `M_s = σ(WtConv7([mean_c(x), max_c(x)]))`.
#[derive(Clone, Debug)]
pub struct SpatialAttention {
    pub wtc: WtConv7,
}

impl SpatialAttention {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str) -> Self {
        let mut b = b.sub(name);
        Self {
            wtc: WtConv7::new(&mut b, "wtc", 2),
        }
    }

    /// N×C×H×W → N×1×H×W.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let avg = tape.channel_reduce(x, PoolKind::Avg)?;
        let max = tape.channel_reduce(x, PoolKind::Max)?;
        let cat = tape.concat(&[avg, max], 1)?;
        let y = self.wtc.forward(tape, cat)?;
        tape.sigmoid(y)
    }

    pub fn param_count(&self) -> usize {
        self.wtc.param_count()
    }
}

/// Channel plus spatial attention pair used inside [`Daff`].
#[derive(Clone, Debug)]
pub struct Csam {
    pub channel: ChannelAttention,
    pub spatial: SpatialAttention,
}

impl Csam {
    pub fn new<T: Scalar>(
        b: &mut Builder<'_, T>,
        name: &str,
        deep_channels: usize,
        reduction: usize,
    ) -> Result<Self> {
        let mut b = b.sub(name);
        Ok(Self {
            channel: ChannelAttention::new(&mut b, "channel", deep_channels, reduction)?,
            spatial: SpatialAttention::new(&mut b, "spatial"),
        })
    }

    pub fn param_count(&self) -> usize {
        self.channel.param_count() + self.spatial.param_count()
    }
}

/// Intermediate maps of one fusion, for inspection and tests.
#[derive(Clone, Copy, Debug)]
pub struct DaffParts {
    pub out: Var,
    /// `proj(maxpool₄(HF)) + LF`.
    pub fused: Var,
    /// N×4C×1×1.
    pub m_c: Var,
    /// N×1×H×W at the shallow resolution.
    pub m_s: Var,
}

/// `(proj(maxpool₄(HF)) + LF) ⊙ M_c(LF) ⊙ maxpool₄(M_s(HF))`.
#[derive(Clone, Debug)]
pub struct Daff {
    pub attn: Csam,
    /// 1×1 conv lifting pooled shallow features from C to 4C channels.
    pub hf_proj: Conv2d,
    pub shallow_channels: usize,
    pub deep_channels: usize,
}

impl Daff {
    pub fn new<T: Scalar>(
        b: &mut Builder<'_, T>,
        name: &str,
        shallow_channels: usize,
        deep_channels: usize,
        reduction: usize,
    ) -> Result<Self> {
        let mut b = b.sub(name);
        Ok(Self {
            attn: Csam::new(&mut b, "csam", deep_channels, reduction)?,
            hf_proj: Conv2d::pointwise(&mut b, "hf_proj", shallow_channels, deep_channels),
            shallow_channels,
            deep_channels,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, hf: Var, lf: Var) -> Result<Var> {
        Ok(self.forward_parts(tape, hf, lf)?.out)
    }

    pub fn forward_parts<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        hf: Var,
        lf: Var,
    ) -> Result<DaffParts> {
        let hs = tape.shape(hf).to_vec();
        let ls = tape.shape(lf).to_vec();
        ensure_dim!(
            hs.len() == 4 && hs[1] == self.shallow_channels,
            "DAFF shallow input must be N×{}×H×W, got {hs:?}",
            self.shallow_channels
        );
        ensure_dim!(
            ls.len() == 4 && ls[1] == self.deep_channels,
            "DAFF deep input must be N×{}×h×w, got {ls:?}",
            self.deep_channels
        );
        ensure_dim!(
            hs[0] == ls[0] && hs[2] == 4 * ls[2] && hs[3] == 4 * ls[3],
            "DAFF needs shallow extents exactly 4× deep ones, got {hs:?} and {ls:?}"
        );
        let pooled = tape.pool2d(hf, PoolKind::Max, 4, 4)?;
        let lifted = self.hf_proj.forward(tape, pooled)?;
        let fused = tape.add(lifted, lf)?;
        let m_c = self.attn.channel.forward(tape, lf)?;
        let m_s = self.attn.spatial.forward(tape, hf)?;
        let m_s_low = tape.pool2d(m_s, PoolKind::Max, 4, 4)?;
        let out = tape.mul(fused, m_c)?;
        let out = tape.mul(out, m_s_low)?;
        Ok(DaffParts {
            out,
            fused,
            m_c,
            m_s,
        })
    }
}

/// Conventional CBAM: fully connected channel MLP (with biases) followed by a
/// plain 7×7 spatial-attention conv.
#[derive(Clone, Debug)]
pub struct Cbam {
    pub fc1: Linear,
    pub fc2: Linear,
    pub spatial: Conv2d,
    pub channels: usize,
    pub hidden: usize,
}

impl Cbam {
    pub fn new<T: Scalar>(
        b: &mut Builder<'_, T>,
        name: &str,
        channels: usize,
        reduction: usize,
    ) -> Result<Self> {
        let hidden = bottleneck(channels, reduction)?;
        let mut b = b.sub(name);
        Ok(Self {
            fc1: Linear::new(&mut b, "fc1", channels, hidden, true),
            fc2: Linear::new(&mut b, "fc2", hidden, channels, true),
            spatial: Conv2d::new(&mut b, "spatial", 2, 1, 7, 1, 3, 1, true),
            channels,
            hidden,
        })
    }

    fn mlp<T: Scalar>(&self, tape: &mut Tape<T>, z: Var) -> Result<Var> {
        let h = self.fc1.forward(tape, z)?;
        let h = tape.relu(h)?;
        self.fc2.forward(tape, h)
    }

    /// Channel then spatial refinement of `x`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        ensure_dim!(
            s.len() == 4 && s[1] == self.channels,
            "CBAM expects N×{}×H×W, got {s:?}",
            self.channels
        );
        let (n, c) = (s[0], s[1]);
        let avg = tape.pool2d(x, PoolKind::GlobalAvg, 0, 0)?;
        let avg = tape.reshape(avg, &[n, c])?;
        let max = tape.pool2d(x, PoolKind::GlobalMax, 0, 0)?;
        let max = tape.reshape(max, &[n, c])?;
        let pa = self.mlp(tape, avg)?;
        let pm = self.mlp(tape, max)?;
        let sum = tape.add(pa, pm)?;
        let m_c = tape.sigmoid(sum)?;
        let m_c = tape.reshape(m_c, &[n, c, 1, 1])?;
        let x = tape.mul(x, m_c)?;

        let avg = tape.channel_reduce(x, PoolKind::Avg)?;
        let max = tape.channel_reduce(x, PoolKind::Max)?;
        let cat = tape.concat(&[avg, max], 1)?;
        let m_s = self.spatial.forward(tape, cat)?;
        let m_s = tape.sigmoid(m_s)?;
        tape.mul(x, m_s)
    }

    pub fn param_count(&self) -> usize {
        let c = self.channels;
        let h = self.hidden;
        (c * h + h) + (h * c + c) + self.spatial.param_count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionKind {
    Csam,
    Cbam,
}

/// Learnable scalars of a freshly built attention pair over `channels`
/// deep-feature channels.
pub fn count_attention_params(
    kind: AttentionKind,
    channels: usize,
    reduction: usize,
) -> Result<usize> {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut b = Builder::new(&mut store, &mut rng);
    match kind {
        AttentionKind::Csam => {
            Csam::new(&mut b, "csam", channels, reduction)?;
        }
        AttentionKind::Cbam => {
            Cbam::new(&mut b, "cbam", channels, reduction)?;
        }
    }
    Ok(store.count())
}
