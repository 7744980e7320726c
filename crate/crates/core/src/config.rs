//! Training configuration and its flat `key = value` text form.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::network::{ModelConfig, SkipMode};
use crate::optim::AdamWConfig;

/// Environment variable overriding the configured seed.
pub const SEED_ENV: &str = "WDFFU_SEED";

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// Directory with `benign/` and `malignant/` subdirectories.
    Dir(PathBuf),
    /// Generated speckled ellipses.
    Synth { n: usize, size: usize },
}

impl DataSource {
    /// Parses `n=K,size=S`.
    pub fn parse_synth(arg: &str) -> Result<Self> {
        let (mut n, mut size) = (None, None);
        for part in arg.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| {
                Error::Config(format!("synthetic data entry {part:?} is not key=value"))
            })?;
            let v: usize = parse_value(k.trim(), v.trim())?;
            match k.trim() {
                "n" => n = Some(v),
                "size" => size = Some(v),
                other => {
                    return Err(Error::Config(format!(
                        "unknown synthetic data key {other:?}"
                    )))
                }
            }
        }
        match (n, size) {
            (Some(n), Some(size)) if n > 0 => Ok(DataSource::Synth { n, size }),
            _ => Err(Error::Config(format!(
                "synthetic data {arg:?} needs n=K (K ≥ 1) and size=S"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps_adam: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Drives model initialization, splitting, shuffling and augmentation.
    pub seed: u64,
    pub model: ModelConfig,
    pub data: Option<DataSource>,
    pub cosine_schedule: bool,
    pub augment: bool,
    /// Split 70/15/15; when false every sample is used for training and validation.
    pub holdout: bool,
    /// Stop after this many optimizer steps.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-2,
            betas: (0.9, 0.999),
            eps_adam: 1e-8,
            epochs: 50,
            batch_size: 4,
            seed: 0,
            model: ModelConfig::default(),
            data: None,
            cosine_schedule: false,
            augment: true,
            holdout: true,
            max_steps: None,
        }
    }
}

fn parse_value<V: FromStr>(key: &str, v: &str) -> Result<V> {
    v.parse()
        .map_err(|_| Error::Config(format!("invalid value {v:?} for {key}")))
}

/// False for NaN as well as for non-positive values.
fn positive(x: f64) -> bool {
    x > 0.0
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {v:?} for {key}"))),
    }
}

fn parse_list<V: FromStr>(key: &str, v: &str) -> Result<Vec<V>> {
    v.split(',').map(|p| parse_value(key, p.trim())).collect()
}

/// Splits `key = value` lines. `#` starts a comment; blank lines are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "line {}: expected key = value, got {line:?}",
                n + 1
            ))
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        if out.iter().any(|(e, _)| e == k) {
            return Err(Error::Config(format!("line {}: duplicate key {k}", n + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

impl TrainConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (k, v) in parse_kv(text)? {
            c.set(&k, &v)?;
        }
        c.validate()?;
        Ok(c)
    }

    /// Applies one key. Unknown keys are an error.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        match key {
            "lr" => self.lr = parse_value(key, v)?,
            "weight_decay" => self.weight_decay = parse_value(key, v)?,
            "betas" => {
                let b: Vec<f64> = parse_list(key, v)?;
                let [b1, b2] = b[..] else {
                    return Err(Error::Config(format!("betas needs two values, got {v:?}")));
                };
                self.betas = (b1, b2);
            }
            "eps_adam" => self.eps_adam = parse_value(key, v)?,
            "epochs" => self.epochs = parse_value(key, v)?,
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "seed" => self.set_seed(parse_value(key, v)?),
            "cosine_schedule" => self.cosine_schedule = parse_bool(key, v)?,
            "augment" => self.augment = parse_bool(key, v)?,
            "holdout" => self.holdout = parse_bool(key, v)?,
            "max_steps" => {
                self.max_steps = if v == "none" {
                    None
                } else {
                    Some(parse_value(key, v)?)
                };
            }
            "data_root" => self.data = Some(DataSource::Dir(PathBuf::from(v))),
            "synth" => self.data = Some(DataSource::parse_synth(v)?),
            "base_channels" => m.base_channels = parse_value(key, v)?,
            "vss_blocks_per_stage" => {
                let b: Vec<usize> = parse_list(key, v)?;
                m.vss_blocks_per_stage = b.try_into().map_err(|_| {
                    Error::Config(format!(
                        "vss_blocks_per_stage needs three values, got {v:?}"
                    ))
                })?;
            }
            "ssm_state" => m.ssm_state = parse_value(key, v)?,
            "reduction" => m.reduction = parse_value(key, v)?,
            "input_size" => {
                let s: Vec<usize> = parse_list(key, v)?;
                m.input_size = match s[..] {
                    [n] => (n, n),
                    [h, w] => (h, w),
                    _ => {
                        return Err(Error::Config(format!(
                            "input_size needs one or two values, got {v:?}"
                        )))
                    }
                };
            }
            "in_channels" => m.in_channels = parse_value(key, v)?,
            "use_whf" => m.use_whf = parse_bool(key, v)?,
            "use_daff" => m.use_daff = parse_bool(key, v)?,
            "skip_mode" => m.skip_mode = SkipMode::parse(v)?,
            _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.model.seed = seed;
    }

    /// Replaces the seed when `value` (the content of [`SEED_ENV`]) is set.
    pub fn apply_seed_override(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            self.set_seed(parse_value(SEED_ENV, v.trim())?);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !positive(self.lr) || !positive(self.weight_decay) {
            return bad(format!(
                "lr and weight_decay must be positive, got {} and {}",
                self.lr, self.weight_decay
            ));
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) || !positive(self.eps_adam) {
            return bad(format!(
                "invalid AdamW betas {:?} / eps {}",
                self.betas, self.eps_adam
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1".into());
        }
        self.model.validate()
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            beta1: self.betas.0,
            beta2: self.betas.1,
            eps: self.eps_adam,
        }
    }

    /// Every key, in a form [`TrainConfig::from_text`] reads back exactly.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("lr", format!("{:?}", self.lr));
        kv("weight_decay", format!("{:?}", self.weight_decay));
        kv("betas", format!("{:?},{:?}", self.betas.0, self.betas.1));
        kv("eps_adam", format!("{:?}", self.eps_adam));
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("seed", self.seed.to_string());
        kv("cosine_schedule", self.cosine_schedule.to_string());
        kv("augment", self.augment.to_string());
        kv("holdout", self.holdout.to_string());
        kv(
            "max_steps",
            self.max_steps.map_or("none".into(), |n| n.to_string()),
        );
        match &self.data {
            Some(DataSource::Dir(p)) => kv("data_root", p.display().to_string()),
            Some(DataSource::Synth { n, size }) => kv("synth", format!("n={n},size={size}")),
            None => {}
        }
        kv("base_channels", m.base_channels.to_string());
        let b = m.vss_blocks_per_stage;
        kv(
            "vss_blocks_per_stage",
            format!("{},{},{}", b[0], b[1], b[2]),
        );
        kv("ssm_state", m.ssm_state.to_string());
        kv("reduction", m.reduction.to_string());
        kv(
            "input_size",
            format!("{},{}", m.input_size.0, m.input_size.1),
        );
        kv("in_channels", m.in_channels.to_string());
        kv("use_whf", m.use_whf.to_string());
        kv("use_daff", m.use_daff.to_string());
        kv("skip_mode", m.skip_mode.as_str().to_string());
        s
    }
}
