//! Overlap metrics, boundary Hausdorff distance and per-image reports.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Binary H×W mask, row-major, values in {0, 1}.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Dimension(format!(
                "mask buffer has {} values, expected {height}×{width}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::Contract(format!("mask value {v} is not binary")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Mask from values that must be exactly 0 or 1.
    pub fn from_binary<T: Scalar>(height: usize, width: usize, values: &[T]) -> Result<Self> {
        let data = values
            .iter()
            .map(|&v| {
                if v == T::zero() {
                    Ok(0)
                } else if v == T::one() {
                    Ok(1)
                } else {
                    Err(Error::Contract(format!("mask value {v} is not binary")))
                }
            })
            .collect::<Result<Vec<u8>>>()?;
        Self::new(height, width, data)
    }

    /// `p > threshold` → 1.
    pub fn threshold<T: Scalar>(
        height: usize,
        width: usize,
        probs: &[T],
        threshold: f64,
    ) -> Result<Self> {
        let t = T::lit(threshold);
        Self::new(
            height,
            width,
            probs.iter().map(|&p| u8::from(p > t)).collect(),
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.width + j] == 1
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn diagonal(&self) -> f64 {
        ((self.height * self.height + self.width * self.width) as f64).sqrt()
    }

    /// Foreground pixels with a 4-neighbour outside the mask or on the image edge.
    pub fn boundary(&self) -> Vec<(usize, usize)> {
        let (h, w) = (self.height, self.width);
        let mut out = Vec::new();
        for i in 0..h {
            for j in 0..w {
                if !self.get(i, j) {
                    continue;
                }
                let edge = i == 0 || j == 0 || i + 1 == h || j + 1 == w;
                if edge
                    || !self.get(i - 1, j)
                    || !self.get(i + 1, j)
                    || !self.get(i, j - 1)
                    || !self.get(i, j + 1)
                {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn from_masks(pred: &Mask, gt: &Mask) -> Result<Self> {
        if (pred.height, pred.width) != (gt.height, gt.width) {
            return Err(Error::Dimension(format!(
                "prediction {}×{} and ground truth {}×{} differ",
                pred.height, pred.width, gt.height, gt.width
            )));
        }
        let mut c = Self::default();
        for (&p, &g) in pred.data.iter().zip(&gt.data) {
            match (p, g) {
                (1, 1) => c.tp += 1,
                (1, 0) => c.fp += 1,
                (0, 1) => c.fn_ += 1,
                _ => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Overlap scores of one prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct OverlapMetrics {
    pub counts: ConfusionCounts,
    pub dice: f64,
    pub jaccard: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    /// Names of metrics whose denominator was zero.
    pub degenerate: Vec<&'static str>,
}

impl OverlapMetrics {
    pub fn from_counts(c: ConfusionCounts) -> Self {
        let mut degenerate = Vec::new();
        // A zero denominator scores 1 when the complementary error count is
        // also zero (both sets empty), else 0.
        let mut ratio = |name, num: u64, den: u64, other_err: u64| {
            if den == 0 {
                degenerate.push(name);
                if other_err == 0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                num as f64 / den as f64
            }
        };
        let dice = ratio("dice", 2 * c.tp, 2 * c.tp + c.fp + c.fn_, 0);
        let jaccard = ratio("jaccard", c.tp, c.tp + c.fp + c.fn_, 0);
        let precision = ratio("precision", c.tp, c.tp + c.fp, c.fn_);
        let recall = ratio("recall", c.tp, c.tp + c.fn_, c.fp);
        let specificity = ratio("specificity", c.tn, c.tn + c.fp, c.fn_);
        Self {
            counts: c,
            dice,
            jaccard,
            precision,
            recall,
            specificity,
            degenerate,
        }
    }
}

pub fn confusion_metrics(pred: &Mask, gt: &Mask) -> Result<OverlapMetrics> {
    Ok(OverlapMetrics::from_counts(ConfusionCounts::from_masks(
        pred, gt,
    )?))
}

/// Percentile with linear interpolation between closest order statistics.
/// `sorted` must be ascending and non-empty.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Exact squared distance from every pixel to the nearest site, by a
/// column pass followed by a row-wise lower envelope in integer arithmetic.
fn squared_distance_field(h: usize, w: usize, sites: &[(usize, usize)]) -> Vec<u64> {
    const INF: u64 = u64::MAX / 4;
    let mut is_site = vec![false; h * w];
    for &(i, j) in sites {
        is_site[i * w + j] = true;
    }
    // Vertical distance to the nearest site in the same column.
    let mut col = vec![INF; h * w];
    for j in 0..w {
        let mut last: Option<usize> = None;
        for i in 0..h {
            if is_site[i * w + j] {
                last = Some(i);
            }
            if let Some(s) = last {
                col[i * w + j] = (i - s) as u64;
            }
        }
        last = None;
        for i in (0..h).rev() {
            if is_site[i * w + j] {
                last = Some(i);
            }
            if let Some(s) = last {
                col[i * w + j] = col[i * w + j].min((s - i) as u64);
            }
        }
    }
    let mut out = vec![INF; h * w];
    for i in 0..h {
        let row = &col[i * w..(i + 1) * w];
        for j in 0..w {
            let mut best = INF;
            for (q, &g) in row.iter().enumerate() {
                if g == INF {
                    continue;
                }
                let dx = j.abs_diff(q) as u64;
                best = best.min(g * g + dx * dx);
            }
            out[i * w + j] = best;
        }
    }
    out
}

/// 95th percentile of nearest distances from each point of `from` to `to`.
pub fn directed_hd95(h: usize, w: usize, from: &[(usize, usize)], to: &[(usize, usize)]) -> f64 {
    let field = squared_distance_field(h, w, to);
    let mut d: Vec<f64> = from
        .iter()
        .map(|&(i, j)| (field[i * w + j] as f64).sqrt())
        .collect();
    d.sort_by(f64::total_cmp);
    percentile_sorted(&d, 0.95)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hd95 {
    pub value: f64,
    /// Exactly one mask was empty; `value` is the image diagonal.
    pub sentinel: bool,
}

/// Symmetric 95th-percentile Hausdorff distance between mask boundaries, in
/// pixels with unit spacing.
pub fn hd95(pred: &Mask, gt: &Mask) -> Result<Hd95> {
    if (pred.height, pred.width) != (gt.height, gt.width) {
        return Err(Error::Dimension(format!(
            "prediction {}×{} and ground truth {}×{} differ",
            pred.height, pred.width, gt.height, gt.width
        )));
    }
    let (a, b) = (pred.boundary(), gt.boundary());
    Ok(match (a.is_empty(), b.is_empty()) {
        (true, true) => Hd95 {
            value: 0.0,
            sentinel: false,
        },
        (true, false) | (false, true) => Hd95 {
            value: pred.diagonal(),
            sentinel: true,
        },
        (false, false) => {
            let (h, w) = (pred.height, pred.width);
            Hd95 {
                value: directed_hd95(h, w, &a, &b).max(directed_hd95(h, w, &b, &a)),
                sentinel: false,
            }
        }
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageMetrics {
    pub id: String,
    pub overlap: OverlapMetrics,
    pub hd95: Hd95,
}

impl ImageMetrics {
    pub fn compute(id: impl Into<String>, pred: &Mask, gt: &Mask) -> Result<Self> {
        Ok(Self {
            id: id.into(),
            overlap: confusion_metrics(pred, gt)?,
            hd95: hd95(pred, gt)?,
        })
    }

    fn values(&self) -> [f64; 6] {
        let o = &self.overlap;
        [
            o.dice,
            o.jaccard,
            o.precision,
            o.recall,
            o.specificity,
            self.hd95.value,
        ]
    }
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self {
                mean: 0.0,
                std: 0.0,
            };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

pub const METRIC_NAMES: [&str; 6] = [
    "dice",
    "jaccard",
    "precision",
    "recall",
    "specificity",
    "hd95",
];

/// Per-image rows and their aggregate.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SegReport {
    pub rows: Vec<ImageMetrics>,
}

impl SegReport {
    pub fn push(&mut self, row: ImageMetrics) {
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Aggregates in [`METRIC_NAMES`] order.
    pub fn aggregate(&self) -> [MeanStd; 6] {
        std::array::from_fn(|k| {
            MeanStd::of(&self.rows.iter().map(|r| r.values()[k]).collect::<Vec<_>>())
        })
    }

    pub fn mean_dice(&self) -> f64 {
        self.aggregate()[0].mean
    }

    pub fn mean_hd95(&self) -> f64 {
        self.aggregate()[5].mean
    }

    /// Comma-separated rows with a trailing `mean±std` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,dice,jaccard,precision,recall,specificity,hd95,notes\n");
        for r in &self.rows {
            let mut notes: Vec<String> = r
                .overlap
                .degenerate
                .iter()
                .map(|d| format!("{d}:empty"))
                .collect();
            if r.hd95.sentinel {
                notes.push("hd95:sentinel".into());
            }
            let _ = write!(s, "{}", r.id);
            for v in r.values() {
                let _ = write!(s, ",{v:.6}");
            }
            let _ = writeln!(s, ",{}", notes.join(";"));
        }
        s.push_str("mean±std");
        for a in self.aggregate() {
            let _ = write!(s, ",{:.4}±{:.4}", a.mean, a.std);
        }
        s.push_str(",\n");
        s
    }
}
