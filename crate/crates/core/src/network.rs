//! Full segmentation network: patch embedding, three selective-scan encoder
//! stages, wavelet guidance on shallow features, dual-attention fusion at the
//! bottleneck, and a mirrored decoder.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::daff::{Daff, DEFAULT_REDUCTION};
use crate::error::{ensure_dim, Error, Result};
use crate::layers::{Builder, Conv2d};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::ssm::{ResampleKind, StageResample, VssBlock};
use crate::tensor::Tensor;
use crate::whf::Whf;

/// How DAFF features enter the decoder skips.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SkipMode {
    /// Encoder feature plus projected DAFF feature.
    Add,
    /// Projected DAFF feature only.
    Replace,
}

impl SkipMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SkipMode::Add => "add",
            SkipMode::Replace => "replace",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "add" => Ok(SkipMode::Add),
            "replace" => Ok(SkipMode::Replace),
            _ => Err(Error::Config(format!(
                "skip_mode must be add or replace, got {s:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub base_channels: usize,
    pub vss_blocks_per_stage: [usize; 3],
    pub ssm_state: usize,
    pub reduction: usize,
    /// (height, width).
    pub input_size: (usize, usize),
    pub in_channels: usize,
    pub seed: u64,
    pub use_whf: bool,
    pub use_daff: bool,
    pub skip_mode: SkipMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            base_channels: 32,
            vss_blocks_per_stage: [2, 2, 2],
            ssm_state: 8,
            reduction: DEFAULT_REDUCTION,
            input_size: (224, 224),
            in_channels: 1,
            seed: 0,
            use_whf: true,
            use_daff: true,
            skip_mode: SkipMode::Add,
        }
    }
}

/// The four component combinations compared in ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Baseline,
    Whf,
    Daff,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Baseline,
        Variant::Whf,
        Variant::Daff,
        Variant::Full,
    ];

    pub fn flags(self) -> (bool, bool) {
        match self {
            Variant::Baseline => (false, false),
            Variant::Whf => (true, false),
            Variant::Daff => (false, true),
            Variant::Full => (true, true),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Whf => "+whf",
            Variant::Daff => "+daff",
            Variant::Full => "+whf+daff",
        }
    }
}

impl ModelConfig {
    pub fn with_variant(mut self, v: Variant) -> Self {
        (self.use_whf, self.use_daff) = v.flags();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.base_channels;
        let (h, w) = self.input_size;
        let err = |m: String| Err(Error::Config(m));
        if c < 2 {
            return err(format!("base_channels must be ≥ 2, got {c}"));
        }
        if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
            return err(format!(
                "input size {h}×{w} must be positive and divisible by 16"
            ));
        }
        if self.ssm_state == 0 {
            return err("ssm_state must be ≥ 1".into());
        }
        if self.vss_blocks_per_stage.contains(&0) {
            return err(format!(
                "every stage needs at least one VSS block, got {:?}",
                self.vss_blocks_per_stage
            ));
        }
        if self.in_channels != 1 && self.in_channels != 3 {
            return err(format!(
                "in_channels must be 1 or 3, got {}",
                self.in_channels
            ));
        }
        if self.use_daff && (self.reduction == 0 || !(4 * c).is_multiple_of(self.reduction)) {
            return err(format!(
                "reduction {} must divide 4·base_channels = {}",
                self.reduction,
                4 * c
            ));
        }
        Ok(())
    }

    pub fn stage_channels(&self) -> [usize; 3] {
        let c = self.base_channels;
        [c, 2 * c, 4 * c]
    }
}

#[derive(Clone, Debug)]
struct Layers {
    patch_embed: StageResample,
    encoder: [Vec<VssBlock>; 3],
    down: [StageResample; 2],
    whf: Option<Whf>,
    /// 1×1 C→C conv routing WHF output into the first skip when DAFF is off.
    whf_proj: Option<Conv2d>,
    daff: Option<Daff>,
    /// 1×1 projections of the DAFF output to stage channels, deepest first.
    skip_proj: Option<[Conv2d; 3]>,
    decoder: [Vec<VssBlock>; 3],
    up: [StageResample; 2],
    head: StageResample,
}

/// A built network: configuration, parameters, and layer wiring.
#[derive(Clone, Debug)]
pub struct Model<T: Scalar = f64> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    layers: Layers,
}

/// Deterministic construction from `cfg.seed`.
pub fn build_model<T: Scalar>(cfg: &ModelConfig) -> Result<Model<T>> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let layers = {
        let mut b = Builder::new(&mut store, &mut rng);
        build_layers(&mut b, cfg)?
    };
    Ok(Model {
        config: cfg.clone(),
        store,
        layers,
    })
}

fn stage<T: Scalar>(
    b: &mut Builder<'_, T>,
    name: &str,
    n: usize,
    ch: usize,
    state: usize,
) -> Vec<VssBlock> {
    let mut b = b.sub(name);
    (0..n)
        .map(|i| VssBlock::new(&mut b, &format!("block{i}"), ch, state))
        .collect()
}

fn build_layers<T: Scalar>(b: &mut Builder<'_, T>, cfg: &ModelConfig) -> Result<Layers> {
    let [c1, c2, c3] = cfg.stage_channels();
    let n = cfg.vss_blocks_per_stage;
    let s = cfg.ssm_state;
    let patch_embed = StageResample::new(
        b,
        "patch_embed",
        ResampleKind::PatchEmbed4,
        cfg.in_channels,
        c1,
    );
    let mut enc = b.sub("encoder");
    let encoder = [
        stage(&mut enc, "stage1", n[0], c1, s),
        stage(&mut enc, "stage2", n[1], c2, s),
        stage(&mut enc, "stage3", n[2], c3, s),
    ];
    let down = [
        StageResample::new(&mut enc, "down1", ResampleKind::Down2, c1, c2),
        StageResample::new(&mut enc, "down2", ResampleKind::Down2, c2, c3),
    ];
    let whf = cfg.use_whf.then(|| Whf::new(b, "whf", c1));
    let whf_proj = (cfg.use_whf && !cfg.use_daff).then(|| Conv2d::pointwise(b, "whf_proj", c1, c1));
    let daff = if cfg.use_daff {
        Some(Daff::new(b, "daff", c1, c3, cfg.reduction)?)
    } else {
        None
    };
    let skip_proj = cfg.use_daff.then(|| {
        let mut sb = b.sub("skip_proj");
        [
            Conv2d::pointwise(&mut sb, "stage3", c3, c3),
            Conv2d::pointwise(&mut sb, "stage2", c3, c2),
            Conv2d::pointwise(&mut sb, "stage1", c3, c1),
        ]
    });
    let mut dec = b.sub("decoder");
    let decoder = [
        stage(&mut dec, "stage1", n[0], c1, s),
        stage(&mut dec, "stage2", n[1], c2, s),
        stage(&mut dec, "stage3", n[2], c3, s),
    ];
    let up = [
        StageResample::new(&mut dec, "up1", ResampleKind::Up2, c2, c1),
        StageResample::new(&mut dec, "up2", ResampleKind::Up2, c3, c2),
    ];
    let head = StageResample::new(b, "head", ResampleKind::FinalExpand4, c1, 1);
    Ok(Layers {
        patch_embed,
        encoder,
        down,
        whf,
        whf_proj,
        daff,
        skip_proj,
        decoder,
        up,
        head,
    })
}

fn run_stage<T: Scalar>(tape: &mut Tape<T>, blocks: &[VssBlock], mut x: Var) -> Result<Var> {
    for blk in blocks {
        x = blk.forward(tape, x)?;
    }
    Ok(x)
}

impl<T: Scalar> Model<T> {
    /// Logits N×1×H×W. `tape` must be bound to `self.store`.
    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        let (h, w) = self.config.input_size;
        ensure_dim!(
            s.len() == 4 && s[1] == self.config.in_channels && s[2] == h && s[3] == w,
            "model expects N×{}×{h}×{w} input, got {s:?}",
            self.config.in_channels
        );
        ensure_dim!(
            tape.n_params() == self.store.len(),
            "tape binds {} parameters, model has {}",
            tape.n_params(),
            self.store.len()
        );
        let l = &self.layers;
        let e0 = l.patch_embed.forward(tape, x)?;
        let e1 = run_stage(tape, &l.encoder[0], e0)?;
        let x2 = l.down[0].forward(tape, e1)?;
        let e2 = run_stage(tape, &l.encoder[1], x2)?;
        let x3 = l.down[1].forward(tape, e2)?;
        let e3 = run_stage(tape, &l.encoder[2], x3)?;

        let hf = match &l.whf {
            Some(whf) => Some(whf.forward(tape, e0)?),
            None => None,
        };
        let (mut skip1, mut skip2, mut skip3) = (e1, e2, e3);
        if let (Some(daff), Some(proj)) = (&l.daff, &l.skip_proj) {
            let fused = daff.forward(tape, hf.unwrap_or(e0), e3)?;
            let p3 = proj[0].forward(tape, fused)?;
            let p2 = proj[1].forward(tape, fused)?;
            let p2 = tape.upsample_bilinear(p2, 2)?;
            let p1 = proj[2].forward(tape, fused)?;
            let p1 = tape.upsample_bilinear(p1, 4)?;
            match self.config.skip_mode {
                SkipMode::Add => {
                    skip3 = tape.add(e3, p3)?;
                    skip2 = tape.add(e2, p2)?;
                    skip1 = tape.add(e1, p1)?;
                }
                SkipMode::Replace => (skip1, skip2, skip3) = (p1, p2, p3),
            }
        } else if let (Some(hf), Some(proj)) = (hf, &l.whf_proj) {
            let p1 = proj.forward(tape, hf)?;
            skip1 = tape.add(e1, p1)?;
        }

        let d3 = run_stage(tape, &l.decoder[2], skip3)?;
        let u2 = l.up[1].forward(tape, d3)?;
        let in2 = tape.add(u2, skip2)?;
        let d2 = run_stage(tape, &l.decoder[1], in2)?;
        let u1 = l.up[0].forward(tape, d2)?;
        let in1 = tape.add(u1, skip1)?;
        let d1 = run_stage(tape, &l.decoder[0], in1)?;
        l.head.forward(tape, d1)
    }

    /// Inference without gradient bookkeeping.
    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::with_params(&self.store, false);
        let xv = tape.constant(x.clone())?;
        let y = self.forward(&mut tape, xv)?;
        Ok(tape.value(y).clone())
    }

    pub fn count_params(&self) -> usize {
        self.store.count()
    }

    pub fn param_report(&self) -> ParamReport {
        let mut rows: Vec<(String, usize)> = Vec::new();
        for p in self.store.iter() {
            let mut parts = p.name.split('.');
            let top = parts.next().unwrap_or_default();
            let key = match top {
                "encoder" | "decoder" => format!("{top}.{}", parts.next().unwrap_or_default()),
                _ => top.to_string(),
            };
            match rows.iter_mut().find(|(k, _)| *k == key) {
                Some(row) => row.1 += p.value.numel(),
                None => rows.push((key, p.value.numel())),
            }
        }
        ParamReport {
            rows,
            total: self.count_params(),
        }
    }
}

/// Parameter counts grouped by module, in construction order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamReport {
    pub rows: Vec<(String, usize)>,
    pub total: usize,
}

impl ParamReport {
    pub fn get(&self, module: &str) -> Option<usize> {
        self.rows.iter().find(|(k, _)| k == module).map(|r| r.1)
    }
}

impl fmt::Display for ParamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .rows
            .iter()
            .map(|(k, _)| k.len())
            .max()
            .unwrap_or(0)
            .max(5);
        for (k, n) in &self.rows {
            writeln!(f, "{k:<width$}  {n:>10}")?;
        }
        write!(f, "{:<width$}  {:>10}", "total", self.total)
    }
}
