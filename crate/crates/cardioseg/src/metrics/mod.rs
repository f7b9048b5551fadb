//! Segmentation quality measures: region overlap (Dice, Jaccard, confusion
//! quotients), contour distances (APD, Hausdorff), good-contour percentage,
//! and per-dataset report aggregation.

mod distance;
mod marching;

pub use distance::{apd, apd_directed, hausdorff};
pub use marching::{largest_component, mask_to_contour};

use std::io::Write;

use thiserror::Error;



#[derive(Debug, Error)]
pub enum MetricError {
    #[error("mask length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("contour metrics need non-empty contours")]
    EmptyContour,
}

fn object_counts(a: &[u8], m: &[u8]) -> Result<(usize, usize, usize), MetricError> {
    if a.len() != m.len() {
        return Err(MetricError::LengthMismatch {
            left: a.len(),
            right: m.len(),
        });
    }
    let mut size_a = 0usize;
    let mut size_m = 0usize;
    let mut overlap = 0usize;
    for (&x, &y) in a.iter().zip(m) {
        let xa = x != 0;
        let ym = y != 0;
        size_a += xa as usize;
        size_m += ym as usize;
        overlap += (xa && ym) as usize;
    }
    Ok((size_a, size_m, overlap))
}

/// `2|A intersect M| / (|A| + |M|)`; 1 when both masks are empty, 0 when
/// exactly one is.
pub fn dice(a: &[u8], m: &[u8]) -> Result<f64, MetricError> {
    let (sa, sm, ov) = object_counts(a, m)?;
    if sa + sm == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * ov as f64 / (sa + sm) as f64)
}

/// `|A intersect M| / |A union M|`; 1 when both masks are empty.
pub fn jaccard(a: &[u8], m: &[u8]) -> Result<f64, MetricError> {
    let (sa, sm, ov) = object_counts(a, m)?;
    let union = sa + sm - ov;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(ov as f64 / union as f64)
}

/// Pixel-classification tallies. `t1`/`t0` are correctly predicted object
/// and background pixels, `f1`/`f0` the pixels misclassified as object and
/// background.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub t1: usize,
    pub t0: usize,
    pub f1: usize,
    pub f0: usize,
}

impl ConfusionCounts {
    pub fn n1(&self) -> usize {
        self.t1 + self.f0
    }

    pub fn n0(&self) -> usize {
        self.t0 + self.f1
    }
}

/// Quotients of the confusion counts; each is `None` when its denominator
/// is zero (flagged as undefined and excluded from aggregates).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ConfusionRates {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
}

pub fn confusion(pred: &[u8], truth: &[u8]) -> Result<(ConfusionCounts, ConfusionRates), MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    let mut counts = ConfusionCounts::default();
    for (&p, &t) in pred.iter().zip(truth) {
        match (p != 0, t != 0) {
            (true, true) => counts.t1 += 1,
            (false, false) => counts.t0 += 1,
            (true, false) => counts.f1 += 1,
            (false, true) => counts.f0 += 1,
        }
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    let rates = ConfusionRates {
        sensitivity: ratio(counts.t1, counts.n1()),
        specificity: ratio(counts.t0, counts.n0()),
        ppv: ratio(counts.t1, counts.t1 + counts.f1),
        npv: ratio(counts.t0, counts.t0 + counts.f0),
    };
    Ok((counts, rates))
}

/// Percentage of contours with APD strictly below 5 mm. Missing predictions
/// (`None`) stay in the denominator as not-good. Undefined for an empty
/// list.
pub fn good_contour_pct(apds: &[Option<f64>]) -> Option<f64> {
    if apds.is_empty() {
        return None;
    }
    let good = apds
        .iter()
        .filter(|a| matches!(a, Some(v) if *v < 5.0))
        .count();
    Some(100.0 * good as f64 / apds.len() as f64)
}

/// Everything measured for one (image, structure) pair.
#[derive(Clone, Debug)]
pub struct ImageMetrics {
    pub id: String,
    pub dice: f64,
    pub jaccard: f64,
    pub apd_mm: Option<f64>,
    pub hausdorff_mm: Option<f64>,
    pub good: bool,
    pub rates: ConfusionRates,
}

/// Compares one predicted mask against ground truth, deriving contours from
/// both masks for the distance measures.
pub fn evaluate_masks(
    id: &str,
    pred: &[u8],
    truth: &[u8],
    h: usize,
    w: usize,
    spacing_mm: (f64, f64),
) -> Result<ImageMetrics, MetricError> {
    let dice_v = dice(pred, truth)?;
    let jaccard_v = jaccard(pred, truth)?;
    let (_, rates) = confusion(pred, truth)?;
    let pred_contour = mask_to_contour(pred, h, w);
    let truth_contour = mask_to_contour(truth, h, w);
    let (apd_mm, hausdorff_mm) = match (&pred_contour, &truth_contour) {
        (Some(p), Some(t)) => (
            Some(apd(p, t, spacing_mm)?),
            Some(hausdorff(p, t, spacing_mm)?),
        ),
        _ => (None, None),
    };
    Ok(ImageMetrics {
        id: id.to_string(),
        dice: dice_v,
        jaccard: jaccard_v,
        apd_mm,
        hausdorff_mm,
        good: matches!(apd_mm, Some(v) if v < 5.0),
        rates,
    })
}

/// Mean and sample (n-1) standard deviation over defined values.
fn mean_sd(values: impl Iterator<Item = f64>) -> (Option<f64>, Option<f64>) {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (Some(mean), None);
    }
    let sd = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    (Some(mean), Some(sd))
}

#[derive(Clone, Debug, Default)]
pub struct Aggregate {
    pub n: usize,
    pub dice: (Option<f64>, Option<f64>),
    pub jaccard: (Option<f64>, Option<f64>),
    pub apd_mm: (Option<f64>, Option<f64>),
    pub hausdorff_mm: (Option<f64>, Option<f64>),
    pub sensitivity: (Option<f64>, Option<f64>),
    pub specificity: (Option<f64>, Option<f64>),
    pub ppv: (Option<f64>, Option<f64>),
    pub npv: (Option<f64>, Option<f64>),
    pub good_pct: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct MetricsReport {
    pub structure: String,
    pub rows: Vec<ImageMetrics>,
    pub aggregate: Aggregate,
}

impl MetricsReport {
    pub fn from_rows(structure: &str, rows: Vec<ImageMetrics>) -> Self {
        let aggregate = Aggregate {
            n: rows.len(),
            dice: mean_sd(rows.iter().map(|r| r.dice)),
            jaccard: mean_sd(rows.iter().map(|r| r.jaccard)),
            apd_mm: mean_sd(rows.iter().filter_map(|r| r.apd_mm)),
            hausdorff_mm: mean_sd(rows.iter().filter_map(|r| r.hausdorff_mm)),
            sensitivity: mean_sd(rows.iter().filter_map(|r| r.rates.sensitivity)),
            specificity: mean_sd(rows.iter().filter_map(|r| r.rates.specificity)),
            ppv: mean_sd(rows.iter().filter_map(|r| r.rates.ppv)),
            npv: mean_sd(rows.iter().filter_map(|r| r.rates.npv)),
            good_pct: good_contour_pct(&rows.iter().map(|r| r.apd_mm).collect::<Vec<_>>()),
        };
        MetricsReport {
            structure: structure.to_string(),
            rows,
            aggregate,
        }
    }

    /// One row per image plus `mean` and `sd` summary rows; the `good` cell
    /// of the mean row carries the good-contour percentage.
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(
            w,
            "id,structure,dice,jaccard,apd_mm,hausdorff_mm,good,sensitivity,specificity,ppv,npv"
        )?;
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{:.6},{:.6},{},{},{},{},{},{},{}",
                r.id,
                self.structure,
                r.dice,
                r.jaccard,
                fmt(r.apd_mm),
                fmt(r.hausdorff_mm),
                if r.good { 1 } else { 0 },
                fmt(r.rates.sensitivity),
                fmt(r.rates.specificity),
                fmt(r.rates.ppv),
                fmt(r.rates.npv),
            )?;
        }
        let a = &self.aggregate;
        writeln!(
            w,
            "mean,{},{},{},{},{},{},{},{},{},{}",
            self.structure,
            fmt(a.dice.0),
            fmt(a.jaccard.0),
            fmt(a.apd_mm.0),
            fmt(a.hausdorff_mm.0),
            a.good_pct.map(|g| format!("{g:.2}")).unwrap_or_default(),
            fmt(a.sensitivity.0),
            fmt(a.specificity.0),
            fmt(a.ppv.0),
            fmt(a.npv.0),
        )?;
        writeln!(
            w,
            "sd,{},{},{},{},{},,{},{},{},{}",
            self.structure,
            fmt(a.dice.1),
            fmt(a.jaccard.1),
            fmt(a.apd_mm.1),
            fmt(a.hausdorff_mm.1),
            fmt(a.sensitivity.1),
            fmt(a.specificity.1),
            fmt(a.ppv.1),
            fmt(a.npv.1),
        )
    }
}

/// Extracts the binary mask of one structure from a label mask.
pub fn structure_mask(labels: &[u8], class: u8, include_higher: bool) -> Vec<u8> {
    labels
        .iter()
        .map(|&v| {
            if (include_higher && v >= class) || (!include_higher && v == class) {
                1
            } else {
                0
            }
        })
        .collect()
}
