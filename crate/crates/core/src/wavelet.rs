//! Orthonormal 2-d Haar transforms, subband Gaussian denoising and the
//! wavelet-domain 7×7 convolution used by spatial attention.

use crate::autograd::{Tape, Var};
use crate::error::{ensure_dim, Result};
use crate::layers::{Builder, Conv2d};
use crate::scalar::Scalar;

/// One Haar level: approximation plus horizontal, vertical and diagonal detail.
///
/// Each band is N×C×⌈H/2⌉×⌈W/2⌉. Odd inputs are reflect-padded by one row or
/// column before analysis; `height`/`width` remember the original extents so
/// synthesis crops back.
#[derive(Clone, Copy, Debug)]
pub struct SubbandSet {
    pub ll: Var,
    pub lh: Var,
    pub hl: Var,
    pub hh: Var,
    pub height: usize,
    pub width: usize,
}

impl SubbandSet {
    pub fn bands(&self) -> [Var; 4] {
        [self.ll, self.lh, self.hl, self.hh]
    }

    /// Bands stacked channel-wise as N×4C×h×w.
    pub fn stacked<T: Scalar>(&self, tape: &mut Tape<T>) -> Result<Var> {
        tape.concat(&self.bands(), 1)
    }
}

/// Single-level analysis. For each 2×2 block `[[a,b],[c,d]]`:
/// `LL=(a+b+c+d)/2`, `LH=(a−b+c−d)/2`, `HL=(a+b−c−d)/2`, `HH=(a−b−c+d)/2`.
pub fn dwt_haar<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<SubbandSet> {
    let s = tape.shape(x).to_vec();
    ensure_dim!(s.len() == 4, "dwt_haar expects N×C×H×W, got {s:?}");
    let (c, h, w) = (s[1], s[2], s[3]);
    ensure_dim!(h > 0 && w > 0, "dwt_haar on empty spatial extents {h}×{w}");
    let padded = if h % 2 == 1 || w % 2 == 1 {
        tape.reflect_pad_end(x, h % 2, w % 2)?
    } else {
        x
    };
    let stacked = tape.haar_forward(padded)?;
    let ll = tape.narrow(stacked, 1, 0, c)?;
    let lh = tape.narrow(stacked, 1, c, c)?;
    let hl = tape.narrow(stacked, 1, 2 * c, c)?;
    let hh = tape.narrow(stacked, 1, 3 * c, c)?;
    Ok(SubbandSet {
        ll,
        lh,
        hl,
        hh,
        height: h,
        width: w,
    })
}

/// Exact inverse of [`dwt_haar`].
pub fn idwt_haar<T: Scalar>(tape: &mut Tape<T>, s: &SubbandSet) -> Result<Var> {
    let shape = tape.shape(s.ll).to_vec();
    for b in s.bands() {
        ensure_dim!(
            tape.shape(b) == shape.as_slice(),
            "subband shapes differ: {:?} vs {:?}",
            shape,
            tape.shape(b)
        );
    }
    ensure_dim!(
        shape.len() == 4 && s.height.div_ceil(2) == shape[2] && s.width.div_ceil(2) == shape[3],
        "subbands {:?} do not match original extents {}×{}",
        shape,
        s.height,
        s.width
    );
    let stacked = s.stacked(tape)?;
    let mut y = tape.haar_inverse(stacked)?;
    if s.height % 2 == 1 {
        y = tape.narrow(y, 2, 0, s.height)?;
    }
    if s.width % 2 == 1 {
        y = tape.narrow(y, 3, 0, s.width)?;
    }
    Ok(y)
}

/// Two-level analysis: every first-level band is decomposed again, giving
/// 16 sub-bands stacked as N×16C×H/4×W/4. H and W must be divisible by 4.
pub fn dwt_haar2<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let s = tape.shape(x);
    ensure_dim!(
        s.len() == 4 && s[2] > 0 && s[3] > 0 && s[2].is_multiple_of(4) && s[3].is_multiple_of(4),
        "two-level Haar needs extents divisible by 4, got {s:?}"
    );
    let first = tape.haar_forward(x)?;
    tape.haar_forward(first)
}

/// Exact inverse of [`dwt_haar2`].
pub fn idwt_haar2<T: Scalar>(tape: &mut Tape<T>, bands: Var) -> Result<Var> {
    let first = tape.haar_inverse(bands)?;
    tape.haar_inverse(first)
}

/// Gaussian widths for the three detail bands.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetailSigmas {
    pub lh: f64,
    pub hl: f64,
    pub hh: f64,
}

impl Default for DetailSigmas {
    fn default() -> Self {
        Self {
            lh: 0.5,
            hl: 0.5,
            hh: 1.0,
        }
    }
}

/// Smooths LH, HL, HH with normalized Gaussians; LL passes through untouched.
pub fn gaussian_subband_filter<T: Scalar>(
    tape: &mut Tape<T>,
    s: &SubbandSet,
    sigmas: DetailSigmas,
) -> Result<SubbandSet> {
    Ok(SubbandSet {
        ll: s.ll,
        lh: tape.gaussian_blur(s.lh, sigmas.lh)?,
        hl: tape.gaussian_blur(s.hl, sigmas.hl)?,
        hh: tape.gaussian_blur(s.hh, sigmas.hh)?,
        height: s.height,
        width: s.width,
    })
}

/// Wavelet-transform convolution: a spatial 7×7 conv plus a 7×7 conv applied
/// per subband in the Haar domain, reconstructed and summed.
#[derive(Clone, Debug)]
pub struct WtConv7 {
    pub spatial: Conv2d,
    /// Grouped conv over the stacked subbands: one group per band.
    pub wavelet: Conv2d,
    pub in_ch: usize,
}

pub const WTCONV_KERNEL: usize = 7;

impl WtConv7 {
    /// Maps `in_ch` channels to one.
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, in_ch: usize) -> Self {
        let mut b = b.sub(name);
        let k = WTCONV_KERNEL;
        Self {
            spatial: Conv2d::new(&mut b, "spatial", in_ch, 1, k, 1, k / 2, 1, true),
            wavelet: Conv2d::new(&mut b, "wavelet", 4 * in_ch, 4, k, 1, k / 2, 4, true),
            in_ch,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        ensure_dim!(
            s.len() == 4 && s[1] == self.in_ch,
            "wtconv7 expects N×{}×H×W, got {s:?}",
            self.in_ch
        );
        ensure_dim!(
            s[2] >= 2 && s[3] >= 2,
            "wtconv7 needs H, W ≥ 2, got {}×{}",
            s[2],
            s[3]
        );
        let spatial = self.spatial.forward(tape, x)?;
        let bands = dwt_haar(tape, x)?;
        let stacked = bands.stacked(tape)?;
        let filtered = self.wavelet.forward(tape, stacked)?;
        let out_bands = SubbandSet {
            ll: tape.narrow(filtered, 1, 0, 1)?,
            lh: tape.narrow(filtered, 1, 1, 1)?,
            hl: tape.narrow(filtered, 1, 2, 1)?,
            hh: tape.narrow(filtered, 1, 3, 1)?,
            height: bands.height,
            width: bands.width,
        };
        let recon = idwt_haar(tape, &out_bands)?;
        tape.add(spatial, recon)
    }

    pub fn param_count(&self) -> usize {
        self.spatial.param_count() + self.wavelet.param_count()
    }
}
