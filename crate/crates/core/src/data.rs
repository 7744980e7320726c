//! Dataset loading, resizing, augmentation, splitting and synthetic samples.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::Mask;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ClassLabel {
    Benign,
    Malignant,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 2] = [ClassLabel::Benign, ClassLabel::Malignant];

    pub fn dir_name(self) -> &'static str {
        match self {
            ClassLabel::Benign => "benign",
            ClassLabel::Malignant => "malignant",
        }
    }
}

/// One grayscale image in `[0, 1]` and its binary mask, both 1×H×W.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub label: ClassLabel,
    pub image: Tensor<f64>,
    pub mask: Tensor<f64>,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }

    pub fn mask_binary(&self) -> Result<Mask> {
        Mask::from_binary(self.height(), self.width(), self.mask.data())
    }
}

/// Samples found on disk and the image files skipped for lack of a usable mask.
#[derive(Clone, Debug, Default)]
pub struct LoadReport {
    pub samples: Vec<Sample>,
    pub skipped: Vec<(PathBuf, String)>,
}

fn image_err(path: &Path, e: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Decodes a PNG to luminance in `[0, 1]`; returns (height, width, values).
pub fn read_gray(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let img = image::open(path)
        .map_err(|e| image_err(path, e))?
        .to_luma8();
    let (w, h) = img.dimensions();
    let data = img
        .into_raw()
        .into_iter()
        .map(|v| f64::from(v) / 255.0)
        .collect();
    Ok((h as usize, w as usize, data))
}

/// Writes an 8-bit grayscale PNG.
pub fn write_gray(path: &Path, height: usize, width: usize, data: &[u8]) -> Result<()> {
    let buf = image::GrayImage::from_raw(width as u32, height as u32, data.to_vec()).ok_or_else(
        || Error::Dimension(format!("{} bytes do not fill {height}×{width}", data.len())),
    )?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_err(path, e))
}

/// Writes a mask as {0, 255}.
pub fn write_mask_png(path: &Path, mask: &Mask) -> Result<()> {
    let bytes: Vec<u8> = mask.data().iter().map(|&v| v * 255).collect();
    write_gray(path, mask.height(), mask.width(), &bytes)
}

/// `stem_mask.png` or `stem_mask_<k>.png` belongs to `stem`.
fn mask_owner(file_stem: &str) -> Option<&str> {
    let idx = file_stem.rfind("_mask")?;
    let rest = &file_stem[idx + "_mask".len()..];
    let ok = rest.is_empty()
        || (rest.len() > 1
            && rest.starts_with('_')
            && rest[1..].chars().all(|c| c.is_ascii_digit()));
    ok.then(|| &file_stem[..idx])
}

fn is_png(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Reads `<root>/{benign,malignant}/` image/mask pairs. Other directories
/// (including `normal`) are ignored; several masks for one image are unioned.
pub fn load_dataset(root: &Path) -> Result<LoadReport> {
    let mut report = LoadReport::default();
    for label in ClassLabel::ALL {
        let dir = root.join(label.dir_name());
        if !dir.is_dir() {
            continue;
        }
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(&dir, err)))
            .collect::<Result<_>>()?;
        files.retain(|p| p.is_file() && is_png(p));
        files.sort();

        let mut images: BTreeMap<String, PathBuf> = BTreeMap::new();
        let mut masks: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
        for p in files {
            let stem = p
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            match mask_owner(&stem) {
                Some(owner) => masks.entry(owner.to_string()).or_default().push(p),
                None => {
                    images.insert(stem, p);
                }
            }
        }
        for (stem, path) in images {
            let Some(mask_paths) = masks.get(&stem) else {
                log::warn!("{}: no mask, skipped", path.display());
                report.skipped.push((path, "no mask".into()));
                continue;
            };
            let (h, w, image) = read_gray(&path)?;
            let mut mask = vec![0.0; h * w];
            let mut mismatch = None;
            for mp in mask_paths {
                let (mh, mw, m) = read_gray(mp)?;
                if (mh, mw) != (h, w) {
                    mismatch = Some(format!(
                        "mask {} is {mh}×{mw}, image is {h}×{w}",
                        mp.display()
                    ));
                    break;
                }
                for (dst, v) in mask.iter_mut().zip(m) {
                    if v * 255.0 > 127.0 {
                        *dst = 1.0;
                    }
                }
            }
            if let Some(reason) = mismatch {
                log::warn!("{}: {reason}, skipped", path.display());
                report.skipped.push((path, reason));
                continue;
            }
            report.samples.push(Sample {
                id: format!("{}/{stem}", label.dir_name()),
                label,
                image: Tensor::new(&[1, h, w], image)?,
                mask: Tensor::new(&[1, h, w], mask)?,
            });
        }
    }
    Ok(report)
}

/// Bilinear resize of C×H×W planes with half-pixel centers.
pub fn resize_bilinear(x: &Tensor<f64>, oh: usize, ow: usize) -> Result<Tensor<f64>> {
    let (c, h, w) = plane_dims(x)?;
    let taps = |len: usize, out: usize| -> Vec<(usize, usize, f64)> {
        let scale = len as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(len - 1);
                (i0, i1, src - i0 as f64)
            })
            .collect()
    };
    let (ty, tx) = (taps(h, oh), taps(w, ow));
    let d = x.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        let p = &d[ci * h * w..(ci + 1) * h * w];
        for &(y0, y1, fy) in &ty {
            for &(x0, x1, fx) in &tx {
                let top = p[y0 * w + x0] * (1.0 - fx) + p[y0 * w + x1] * fx;
                let bot = p[y1 * w + x0] * (1.0 - fx) + p[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Tensor::new(&[c, oh, ow], out)
}

/// Nearest-neighbour resize of C×H×W planes (pixel-center sampling).
pub fn resize_nearest(x: &Tensor<f64>, oh: usize, ow: usize) -> Result<Tensor<f64>> {
    let (c, h, w) = plane_dims(x)?;
    let src = |o: usize, out: usize, len: usize| {
        (((o as f64 + 0.5) * len as f64 / out as f64) as usize).min(len - 1)
    };
    let d = x.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        for i in 0..oh {
            let si = src(i, oh, h);
            for j in 0..ow {
                out.push(d[(ci * h + si) * w + src(j, ow, w)]);
            }
        }
    }
    Tensor::new(&[c, oh, ow], out)
}

fn plane_dims(x: &Tensor<f64>) -> Result<(usize, usize, usize)> {
    let s = x.shape();
    if s.len() != 3 || s[1] == 0 || s[2] == 0 {
        return Err(Error::Dimension(format!(
            "expected a non-empty C×H×W tensor, got {s:?}"
        )));
    }
    Ok((s[0], s[1], s[2]))
}

/// Image by bilinear, mask by nearest neighbour then re-binarized.
pub fn resize_to(s: &Sample, height: usize, width: usize) -> Result<Sample> {
    if height == 0 || width == 0 {
        return Err(Error::Dimension(format!(
            "cannot resize to {height}×{width}"
        )));
    }
    let mask = resize_nearest(&s.mask, height, width)?.map(|v| if v > 0.5 { 1.0 } else { 0.0 });
    Ok(Sample {
        id: s.id.clone(),
        label: s.label,
        image: resize_bilinear(&s.image, height, width)?,
        mask,
    })
}

/// Mirrors each row.
pub fn hflip(x: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (c, h, w) = plane_dims(x)?;
    let d = x.data();
    Tensor::new(
        &[c, h, w],
        (0..c * h * w)
            .map(|k| d[k - k % w + (w - 1 - k % w)])
            .collect(),
    )
}

/// Mirrors each column.
pub fn vflip(x: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (c, h, w) = plane_dims(x)?;
    let d = x.data();
    let mut out = Vec::with_capacity(d.len());
    for ci in 0..c {
        for i in (0..h).rev() {
            out.extend_from_slice(&d[(ci * h + i) * w..(ci * h + i + 1) * w]);
        }
    }
    Tensor::new(&[c, h, w], out)
}

/// Counter-clockwise quarter turn: `out[i][j] = in[j][w−1−i]`.
pub fn rot90(x: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (c, h, w) = plane_dims(x)?;
    let d = x.data();
    let mut out = Vec::with_capacity(d.len());
    for ci in 0..c {
        for i in 0..w {
            for j in 0..h {
                out.push(d[(ci * h + j) * w + (w - 1 - i)]);
            }
        }
    }
    Tensor::new(&[c, w, h], out)
}

/// Independent horizontal flip (p = 0.5), vertical flip (p = 0.5) and a
/// quarter-turn count drawn from {0, 1, 2, 3}, applied to image and mask alike.
pub fn augment(s: &Sample, rng: &mut impl Rng) -> Result<Sample> {
    if s.height() != s.width() {
        return Err(Error::Dimension(format!(
            "augmentation needs square samples, got {}×{}",
            s.height(),
            s.width()
        )));
    }
    let h = rng.gen_bool(0.5);
    let v = rng.gen_bool(0.5);
    let k = rng.gen_range(0..4);
    let apply = |t: &Tensor<f64>| -> Result<Tensor<f64>> {
        let mut t = if h { hflip(t)? } else { t.clone() };
        if v {
            t = vflip(&t)?;
        }
        for _ in 0..k {
            t = rot90(&t)?;
        }
        Ok(t)
    };
    Ok(Sample {
        id: s.id.clone(),
        label: s.label,
        image: apply(&s.image)?,
        mask: apply(&s.mask)?,
    })
}

/// Per-sample generator: streams depend only on the seed and the sample key.
pub fn sample_rng(seed: u64, key: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ key)
}

pub const TRAIN_RATIO: f64 = 0.70;
pub const VAL_RATIO: f64 = 0.15;

/// Indices into the input, per partition.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified 70/15/15 split with per-class flooring. Items are ordered by
/// key within each class before the seeded shuffle, so input order does not
/// matter.
pub fn split_indices(items: &[(ClassLabel, &str)], seed: u64) -> Result<SplitIndices> {
    if items.len() < 3 {
        return Err(Error::Config(format!(
            "need at least 3 samples to split, got {}",
            items.len()
        )));
    }
    let mut out = SplitIndices::default();
    for (ci, label) in ClassLabel::ALL.into_iter().enumerate() {
        let mut idx: Vec<usize> = (0..items.len()).filter(|&i| items[i].0 == label).collect();
        if idx.is_empty() {
            continue;
        }
        idx.sort_by(|&a, &b| items[a].1.cmp(items[b].1).then(a.cmp(&b)));
        let n = idx.len();
        if n < 3 {
            log::warn!(
                "class {} has only {n} samples; all go to training",
                label.dir_name()
            );
            out.train.extend(idx);
            continue;
        }
        idx.shuffle(&mut sample_rng(seed, ci as u64));
        let n_train = (TRAIN_RATIO * n as f64).floor() as usize;
        let n_val = (VAL_RATIO * n as f64).floor() as usize;
        out.train.extend_from_slice(&idx[..n_train]);
        out.val.extend_from_slice(&idx[n_train..n_train + n_val]);
        out.test.extend_from_slice(&idx[n_train + n_val..]);
    }
    Ok(out)
}

#[derive(Clone, Debug, Default)]
pub struct DataSplit {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

pub fn split(samples: &[Sample], seed: u64) -> Result<DataSplit> {
    let keys: Vec<(ClassLabel, &str)> = samples.iter().map(|s| (s.label, s.id.as_str())).collect();
    let idx = split_indices(&keys, seed)?;
    let pick = |v: &[usize]| v.iter().map(|&i| samples[i].clone()).collect();
    Ok(DataSplit {
        train: pick(&idx.train),
        val: pick(&idx.val),
        test: pick(&idx.test),
    })
}

pub const SPECKLE_STRENGTH: f64 = 0.3;

/// Geometry of a synthetic lesion, in pixel units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub cy: f64,
    pub cx: f64,
    pub a: f64,
    pub b: f64,
    pub theta: f64,
}

impl Ellipse {
    /// Whether the pixel center `(i, j)` lies inside.
    pub fn contains(&self, i: usize, j: usize) -> bool {
        let (y, x) = (i as f64 - self.cy, j as f64 - self.cx);
        let (s, c) = self.theta.sin_cos();
        let u = (x * c + y * s) / self.a;
        let v = (-x * s + y * c) / self.b;
        u * u + v * v <= 1.0
    }

    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.a * self.b
    }
}

/// `n` speckled ellipse images of `size`², alternating benign/malignant labels.
pub fn synth_dataset(n: usize, size: usize, seed: u64) -> Result<Vec<Sample>> {
    Ok(synth_with_geometry(n, size, seed)?
        .into_iter()
        .map(|(s, _)| s)
        .collect())
}

/// As [`synth_dataset`], also returning each lesion's geometry.
pub fn synth_with_geometry(n: usize, size: usize, seed: u64) -> Result<Vec<(Sample, Ellipse)>> {
    if size < 32 {
        return Err(Error::Config(format!(
            "synthetic images need size ≥ 32, got {size}"
        )));
    }
    let sz = size as f64;
    (0..n)
        .map(|k| {
            let mut rng = sample_rng(seed, k as u64);
            let bg = rng.gen_range(0.10..0.25);
            let fg = rng.gen_range(0.60..0.85);
            let a = rng.gen_range(0.12 * sz..0.28 * sz);
            let b = rng.gen_range(0.12 * sz..0.28 * sz);
            let r = a.max(b) + 1.0;
            let ell = Ellipse {
                cy: rng.gen_range(r..sz - 1.0 - r),
                cx: rng.gen_range(r..sz - 1.0 - r),
                a,
                b,
                theta: rng.gen_range(0.0..std::f64::consts::PI),
            };
            let mut image = Vec::with_capacity(size * size);
            let mut mask = Vec::with_capacity(size * size);
            for i in 0..size {
                for j in 0..size {
                    let inside = ell.contains(i, j);
                    let base = if inside { fg } else { bg };
                    let noise = 1.0 + SPECKLE_STRENGTH * rng.gen_range(-1.0..1.0);
                    image.push((base * noise).clamp(0.0, 1.0));
                    mask.push(if inside { 1.0 } else { 0.0 });
                }
            }
            let label = if k % 2 == 0 {
                ClassLabel::Benign
            } else {
                ClassLabel::Malignant
            };
            Ok((
                Sample {
                    id: format!("synth_{k:04}"),
                    label,
                    image: Tensor::new(&[1, size, size], image)?,
                    mask: Tensor::new(&[1, size, size], mask)?,
                },
                ell,
            ))
        })
        .collect()
}

/// Stacks samples into N×C×H×W images (grayscale replicated to `channels`)
/// and N×1×H×W masks.
pub fn batch(samples: &[&Sample], channels: usize) -> Result<(Tensor<f64>, Tensor<f64>)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Contract("cannot batch zero samples".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut img = Vec::with_capacity(samples.len() * channels * h * w);
    let mut msk = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        if (s.height(), s.width()) != (h, w) {
            return Err(Error::Dimension(format!(
                "sample {} is {}×{}, batch is {h}×{w}",
                s.id,
                s.height(),
                s.width()
            )));
        }
        for _ in 0..channels {
            img.extend_from_slice(s.image.data());
        }
        msk.extend_from_slice(s.mask.data());
    }
    Ok((
        Tensor::new(&[samples.len(), channels, h, w], img)?,
        Tensor::new(&[samples.len(), 1, h, w], msk)?,
    ))
}
