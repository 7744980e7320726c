//! Wavelet-denoised high-frequency guidance: subband denoising followed by a
//! high-frequency attention branch and a non-local context branch.

use crate::autograd::{Tape, Var};
use crate::error::{ensure_dim, Result};
use crate::layers::{Builder, Conv2d};
use crate::scalar::Scalar;
use crate::wavelet::{dwt_haar, dwt_haar2, gaussian_subband_filter, idwt_haar, DetailSigmas};

/// `idwt(filter(dwt(x)))` with the given detail-band widths.
pub fn wavelet_denoise<T: Scalar>(tape: &mut Tape<T>, x: Var, sigmas: DetailSigmas) -> Result<Var> {
    let bands = dwt_haar(tape, x)?;
    let filtered = gaussian_subband_filter(tape, &bands, sigmas)?;
    idwt_haar(tape, &filtered)
}

/// High-frequency guided feature extraction.
#[derive(Clone, Debug)]
pub struct Hgfe {
    /// C→1 projection producing the single-channel map `F₁`.
    pub conv_to_one: Conv2d,
    /// 16→C projection of the two-level sub-subbands.
    pub hf_attn_conv: Conv2d,
    /// 2C→C fusion after concatenating with the input.
    pub fuse_conv: Conv2d,
    pub channels: usize,
}

/// Output of [`Hgfe::forward_parts`].
#[derive(Clone, Copy, Debug)]
pub struct HgfeParts {
    pub out: Var,
    /// Channel-softmax attention at H/4×W/4, before upsampling.
    pub attention: Var,
}

impl Hgfe {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, channels: usize) -> Self {
        let mut b = b.sub(name);
        Self {
            conv_to_one: Conv2d::pointwise(&mut b, "conv_to_one", channels, 1),
            hf_attn_conv: Conv2d::pointwise(&mut b, "hf_attn_conv", 16, channels),
            fuse_conv: Conv2d::pointwise(&mut b, "fuse_conv", 2 * channels, channels),
            channels,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, f: Var) -> Result<Var> {
        Ok(self.forward_parts(tape, f)?.out)
    }

    pub fn forward_parts<T: Scalar>(&self, tape: &mut Tape<T>, f: Var) -> Result<HgfeParts> {
        let s = tape.shape(f).to_vec();
        ensure_dim!(
            s.len() == 4 && s[1] == self.channels,
            "HGFE expects N×{}×H×W, got {s:?}",
            self.channels
        );
        ensure_dim!(
            s[2].is_multiple_of(4) && s[3].is_multiple_of(4) && s[2] > 0 && s[3] > 0,
            "HGFE needs extents divisible by 4, got {}×{}",
            s[2],
            s[3]
        );
        let f1 = self.conv_to_one.forward(tape, f)?;
        let sub = dwt_haar2(tape, f1)?;
        let logits = self.hf_attn_conv.forward(tape, sub)?;
        let attention = tape.softmax(logits, 1)?;
        let up = tape.upsample_bilinear(attention, 4)?;
        let guided = tape.mul(up, f1)?;
        let cat = tape.concat(&[guided, f], 1)?;
        let out = self.fuse_conv.forward(tape, cat)?;
        Ok(HgfeParts { out, attention })
    }
}

/// Embedded-Gaussian non-local block with a C/2 bottleneck and a residual.
#[derive(Clone, Debug)]
pub struct NonLocal {
    pub theta: Conv2d,
    pub phi: Conv2d,
    pub g: Conv2d,
    pub out: Conv2d,
    pub channels: usize,
    pub inner: usize,
}

/// Output of [`NonLocal::forward_parts`].
#[derive(Clone, Copy, Debug)]
pub struct NonLocalParts {
    pub out: Var,
    /// N×L×L, rows indexed by query position, softmax over keys.
    pub attention: Var,
}

impl NonLocal {
    /// # Panics
    /// If `channels < 2`; model configuration rejects this earlier.
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, channels: usize) -> Self {
        assert!(channels >= 2, "non-local block needs at least 2 channels");
        let inner = channels / 2;
        let mut b = b.sub(name);
        Self {
            theta: Conv2d::pointwise(&mut b, "theta", channels, inner),
            phi: Conv2d::pointwise(&mut b, "phi", channels, inner),
            g: Conv2d::pointwise(&mut b, "g", channels, inner),
            out: Conv2d::pointwise(&mut b, "out", inner, channels),
            channels,
            inner,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, f: Var) -> Result<Var> {
        Ok(self.forward_parts(tape, f)?.out)
    }

    pub fn forward_parts<T: Scalar>(&self, tape: &mut Tape<T>, f: Var) -> Result<NonLocalParts> {
        let s = tape.shape(f).to_vec();
        ensure_dim!(
            s.len() == 4 && s[1] == self.channels,
            "non-local block expects N×{}×H×W, got {s:?}",
            self.channels
        );
        let (n, h, w) = (s[0], s[2], s[3]);
        let (l, ci) = (h * w, self.inner);

        let theta = self.theta.forward(tape, f)?;
        let theta = tape.reshape(theta, &[n, ci, l])?;
        let theta = tape.permute(theta, &[0, 2, 1])?;
        let phi = self.phi.forward(tape, f)?;
        let phi = tape.reshape(phi, &[n, ci, l])?;
        let g = self.g.forward(tape, f)?;
        let g = tape.reshape(g, &[n, ci, l])?;
        let g = tape.permute(g, &[0, 2, 1])?;

        let scores = tape.matmul(theta, phi)?;
        let attention = tape.softmax(scores, 2)?;
        let y = tape.matmul(attention, g)?;
        let y = tape.permute(y, &[0, 2, 1])?;
        let y = tape.reshape(y, &[n, ci, h, w])?;
        let y = self.out.forward(tape, y)?;
        let out = tape.add(f, y)?;
        Ok(NonLocalParts { out, attention })
    }
}

/// `F = denoise(x)`, `F_out = NonLocal(F) + Hgfe(F)`.
#[derive(Clone, Debug)]
pub struct Whf {
    pub hgfe: Hgfe,
    pub nonlocal: NonLocal,
    pub sigmas: DetailSigmas,
}

impl Whf {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, channels: usize) -> Self {
        let mut b = b.sub(name);
        Self {
            hgfe: Hgfe::new(&mut b, "hgfe", channels),
            nonlocal: NonLocal::new(&mut b, "nonlocal", channels),
            sigmas: DetailSigmas::default(),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let f = wavelet_denoise(tape, x, self.sigmas)?;
        let nl = self.nonlocal.forward(tape, f)?;
        let hg = self.hgfe.forward(tape, f)?;
        tape.add(nl, hg)
    }
}
