//! Training loop with best-on-validation checkpointing, evaluation and
//! single-image prediction.

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::autograd::Tape;
use crate::checkpoint::Checkpoint;
use crate::config::{DataSource, TrainConfig};
use crate::data::{
    augment, batch, load_dataset, read_gray, resize_bilinear, resize_nearest, resize_to,
    sample_rng, split, synth_dataset, write_gray, write_mask_png, DataSplit, Sample,
};
use crate::error::{Error, Result};
use crate::loss::combined_loss;
use crate::metrics::{ImageMetrics, Mask, SegReport};
use crate::network::{build_model, Model};
use crate::optim::{cosine_lr, AdamW};
use crate::tensor::Tensor;

pub const THRESHOLD: f64 = 0.5;
pub const BEST_CKPT: &str = "best.ckpt";
pub const LAST_CKPT: &str = "last.ckpt";
pub const TRAIN_LOG: &str = "train_log.csv";

/// Stream key for the per-epoch shuffle; augmentation uses the sample index.
const SHUFFLE_KEY: u64 = 0xFFFF_FFFF;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: u64,
    pub train_loss: f64,
    pub val_dice: f64,
    pub val_hd95: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// Loads or generates samples at the model's input size.
pub fn load_samples(cfg: &TrainConfig) -> Result<Vec<Sample>> {
    let (h, w) = cfg.model.input_size;
    let raw = match &cfg.data {
        None => return Err(Error::Config("no data source configured".into())),
        Some(DataSource::Dir(root)) => load_dataset(root)?.samples,
        Some(DataSource::Synth { n, size }) => synth_dataset(*n, *size, cfg.seed)?,
    };
    raw.iter()
        .map(|s| {
            if (s.height(), s.width()) == (h, w) {
                Ok(s.clone())
            } else {
                resize_to(s, h, w)
            }
        })
        .collect()
}

/// 70/15/15 stratified split, or every sample in every partition when
/// `holdout` is off.
pub fn partition(cfg: &TrainConfig, samples: &[Sample]) -> Result<DataSplit> {
    if cfg.holdout {
        split(samples, cfg.seed)
    } else {
        Ok(DataSplit {
            train: samples.to_vec(),
            val: samples.to_vec(),
            test: samples.to_vec(),
        })
    }
}

pub fn train(cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let samples = load_samples(cfg)?;
    if samples.is_empty() {
        return Err(Error::Config("dataset is empty".into()));
    }
    let parts = partition(cfg, &samples)?;
    train_on(cfg, &parts, out_dir)
}

fn append_log(path: &Path, row: &EpochLog) -> Result<()> {
    let new = !path.exists();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut line = String::new();
    if new {
        line.push_str("epoch,steps,train_loss,val_dice,val_hd95\n");
    }
    line.push_str(&format!(
        "{},{},{:.8},{:.8},{:.6}\n",
        row.epoch, row.steps, row.train_loss, row.val_dice, row.val_hd95
    ));
    f.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn train_on(
    cfg: &TrainConfig,
    parts: &DataSplit,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if parts.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    if cfg.epochs == 0 {
        return Err(Error::Config("epochs must be ≥ 1".into()));
    }
    let val: &[Sample] = if parts.val.is_empty() {
        log::warn!("validation split is empty; validating on the training split");
        &parts.train
    } else {
        &parts.val
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let log_path = dir.join(TRAIN_LOG);
        if log_path.exists() {
            fs::remove_file(&log_path).map_err(|e| Error::io(&log_path, e))?;
        }
    }

    let mut model = build_model::<f64>(&cfg.model)?;
    let mut opt = AdamW::new(cfg.adamw(), &model.store);
    let mut best: Option<Checkpoint> = None;
    let mut log_rows = Vec::new();
    let channels = cfg.model.in_channels;

    'epochs: for epoch in 0..cfg.epochs {
        let lr = if cfg.cosine_schedule {
            cosine_lr(cfg.lr, epoch, cfg.epochs)
        } else {
            cfg.lr
        };
        let epoch_key = (epoch as u64) << 32;
        let mut order: Vec<usize> = (0..parts.train.len()).collect();
        order.shuffle(&mut sample_rng(cfg.seed, epoch_key | SHUFFLE_KEY));

        let (mut loss_sum, mut n_batches) = (0.0, 0usize);
        let mut stop = false;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let items = chunk
                .iter()
                .map(|&i| {
                    let s = &parts.train[i];
                    if cfg.augment {
                        augment(s, &mut sample_rng(cfg.seed, epoch_key | i as u64))
                    } else {
                        Ok(s.clone())
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&Sample> = items.iter().collect();
            let (x, y) = batch(&refs, channels)?;
            let loss = train_step(&mut model, &mut opt, x, y, lr).map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("epoch {epoch} batch {bi}: {m}")),
                other => other,
            })?;
            loss_sum += loss;
            n_batches += 1;
            if cfg.max_steps.is_some_and(|m| opt.step >= m as u64) {
                stop = true;
                break;
            }
        }

        let report = evaluate_samples(&model, val, cfg.batch_size)?;
        let row = EpochLog {
            epoch: epoch + 1,
            steps: opt.step,
            train_loss: loss_sum / n_batches.max(1) as f64,
            val_dice: report.mean_dice(),
            val_hd95: report.mean_hd95(),
        };
        log::info!(
            "epoch {} step {} loss {:.5} val dice {:.4} hd95 {:.3}",
            row.epoch,
            row.steps,
            row.train_loss,
            row.val_dice,
            row.val_hd95
        );
        if let Some(dir) = out_dir {
            append_log(&dir.join(TRAIN_LOG), &row)?;
        }
        if best.as_ref().is_none_or(|b| row.val_dice > b.best_val_dice) {
            let ck = Checkpoint::capture(cfg, &model, Some(&opt), row.epoch as u64, row.val_dice);
            if let Some(dir) = out_dir {
                ck.save(&dir.join(BEST_CKPT))?;
            }
            best = Some(ck);
        }
        log_rows.push(row);
        if stop {
            break 'epochs;
        }
    }

    let best = best.expect("at least one epoch ran");
    let last_epoch = log_rows.last().map_or(0, |r| r.epoch as u64);
    let last = Checkpoint::capture(cfg, &model, Some(&opt), last_epoch, best.best_val_dice);
    if let Some(dir) = out_dir {
        last.save(&dir.join(LAST_CKPT))?;
    }
    Ok(TrainOutcome {
        best,
        last,
        log: log_rows,
    })
}

/// One forward/backward/update; returns the batch loss.
pub fn train_step(
    model: &mut Model<f64>,
    opt: &mut AdamW<f64>,
    x: Tensor<f64>,
    y: Tensor<f64>,
    lr: f64,
) -> Result<f64> {
    let mut tape = Tape::with_params(&model.store, true);
    let xv = tape.constant(x)?;
    let yv = tape.constant(y)?;
    let logits = model.forward(&mut tape, xv)?;
    let probs = tape.sigmoid(logits)?;
    let loss = combined_loss(&mut tape, probs, yv)?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Numeric(format!("loss is {value}")));
    }
    tape.backward(loss)?;
    model.store.collect_grads(&mut tape)?;
    opt.step_with_lr(&mut model.store, lr)?;
    model.store.zero_grads();
    Ok(value)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-pixel probabilities for a batch of samples, each 1×H×W.
pub fn predict_probs(model: &Model<f64>, samples: &[&Sample]) -> Result<Vec<Tensor<f64>>> {
    let (h, w) = model.config.input_size;
    if let Some(s) = samples.iter().find(|s| (s.height(), s.width()) != (h, w)) {
        return Err(Error::Config(format!(
            "sample {} is {}×{}, model expects {h}×{w}",
            s.id,
            s.height(),
            s.width()
        )));
    }
    let (x, _) = batch(samples, model.config.in_channels)?;
    let logits = model.logits(&x)?;
    let per = h * w;
    Ok(logits
        .data()
        .chunks(per)
        .map(|c| {
            Tensor::new(&[1, h, w], c.iter().map(|&v| sigmoid(v)).collect()).expect("plane size")
        })
        .collect())
}

/// Metrics of probability maps thresholded at 0.5 against sample masks.
pub fn report_from_probs(samples: &[&Sample], probs: &[Tensor<f64>]) -> Result<SegReport> {
    if samples.len() != probs.len() {
        return Err(Error::Contract(format!(
            "{} samples but {} predictions",
            samples.len(),
            probs.len()
        )));
    }
    let mut report = SegReport::default();
    for (s, p) in samples.iter().zip(probs) {
        let pred = Mask::threshold(s.height(), s.width(), p.data(), THRESHOLD)?;
        report.push(ImageMetrics::compute(
            s.id.clone(),
            &pred,
            &s.mask_binary()?,
        )?);
    }
    Ok(report)
}

pub fn evaluate_samples(
    model: &Model<f64>,
    samples: &[Sample],
    batch_size: usize,
) -> Result<SegReport> {
    if samples.is_empty() {
        return Err(Error::Config("evaluation split is empty".into()));
    }
    let mut report = SegReport::default();
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let probs = predict_probs(model, &refs)?;
        report.rows.extend(report_from_probs(&refs, &probs)?.rows);
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            _ => Err(Error::Config(format!(
                "split must be train, val or test, got {s:?}"
            ))),
        }
    }
}

/// Evaluates a checkpoint on `samples`.
pub fn evaluate(ckpt: &Checkpoint, samples: &[Sample]) -> Result<SegReport> {
    let model = ckpt.model::<f64>()?;
    evaluate_samples(&model, samples, ckpt.config.batch_size)
}

/// Re-derives the checkpoint's split of `data` and evaluates one partition.
pub fn evaluate_split(ckpt: &Checkpoint, data: DataSource, which: SplitName) -> Result<SegReport> {
    let mut cfg = ckpt.config.clone();
    cfg.data = Some(data);
    let samples = load_samples(&cfg)?;
    let parts = partition(&cfg, &samples)?;
    let chosen = match which {
        SplitName::Train => &parts.train,
        SplitName::Val => &parts.val,
        SplitName::Test => &parts.test,
    };
    evaluate(ckpt, chosen)
}

/// Segments one image file and writes a {0, 255} mask at its original size.
/// The probability map is written as 8-bit grayscale when `probs_out` is given.
pub fn predict(
    ckpt: &Checkpoint,
    image: &Path,
    out: &Path,
    probs_out: Option<&Path>,
) -> Result<Mask> {
    let model = ckpt.model::<f64>()?;
    let (h, w, data) = read_gray(image)?;
    let (mh, mw) = model.config.input_size;
    let resized = resize_bilinear(&Tensor::new(&[1, h, w], data)?, mh, mw)?;
    let sample = Sample {
        id: image.display().to_string(),
        label: crate::data::ClassLabel::Benign,
        mask: Tensor::zeros(&[1, mh, mw]),
        image: resized,
    };
    let probs = predict_probs(&model, &[&sample])?.remove(0);
    let small = probs.map(|p| if p > THRESHOLD { 1.0 } else { 0.0 });
    let full = resize_nearest(&small, h, w)?;
    let mask = Mask::from_binary(h, w, full.data())?;
    write_mask_png(out, &mask)?;
    if let Some(p) = probs_out {
        let bytes: Vec<u8> = resize_bilinear(&probs, h, w)?
            .data()
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        write_gray(p, h, w, &bytes)?;
    }
    Ok(mask)
}
