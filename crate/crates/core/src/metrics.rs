//! Shape error metrics and box-plot summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::MarkerChain;
use crate::stats::{percentile_sorted, sorted};

fn check_counts(truth: &MarkerChain, pred: &MarkerChain) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(Error::LengthMismatch(format!(
            "true chain has {} markers, prediction has {}",
            truth.len(),
            pred.len()
        )));
    }
    Ok(())
}

/// Euclidean distance between the last markers.
pub fn tip_error(truth: &MarkerChain, pred: &MarkerChain) -> Result<f64> {
    check_counts(truth, pred)?;
    Ok((truth.tip() - pred.tip()).norm())
}

/// Per-marker Euclidean distances, optionally without the first marker.
pub fn marker_distances(truth: &MarkerChain, pred: &MarkerChain, exclude_first: bool) -> Result<Vec<f64>> {
    check_counts(truth, pred)?;
    let skip = usize::from(exclude_first);
    Ok(truth
        .positions
        .iter()
        .zip(&pred.positions)
        .skip(skip)
        .map(|(a, b)| (a - b).norm())
        .collect())
}

/// Root-mean-square of the per-marker distances.
pub fn shape_rmse(truth: &MarkerChain, pred: &MarkerChain, exclude_first: bool) -> Result<f64> {
    let d = marker_distances(truth, pred, exclude_first)?;
    Ok((d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeErrorReport {
    pub tip_error: f64,
    pub rmse: f64,
    pub per_marker: Vec<f64>,
}

pub fn evaluate(truth: &MarkerChain, pred: &MarkerChain, exclude_first: bool) -> Result<ShapeErrorReport> {
    let per_marker = marker_distances(truth, pred, exclude_first)?;
    let rmse = (per_marker.iter().map(|v| v * v).sum::<f64>() / per_marker.len() as f64).sqrt();
    Ok(ShapeErrorReport {
        tip_error: tip_error(truth, pred)?,
        rmse,
        per_marker,
    })
}

/// Box-plot statistics; whiskers are the most extreme values inside the
/// 1.5·IQR fences.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: usize,
    pub min: f64,
    pub max: f64,
}

pub fn summarize(values: &[f64]) -> Result<BoxStats> {
    if values.is_empty() {
        return Err(Error::Domain("cannot summarize an empty set".into()));
    }
    let v = sorted(values)?;
    let q1 = percentile_sorted(&v, 25.0)?;
    let median = percentile_sorted(&v, 50.0)?;
    let q3 = percentile_sorted(&v, 75.0)?;
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = v
        .iter()
        .copied()
        .filter(|x| (lo_fence..=hi_fence).contains(x))
        .collect();
    Ok(BoxStats {
        n: v.len(),
        mean: v.iter().sum::<f64>() / v.len() as f64,
        median,
        q1,
        q3,
        iqr,
        whisker_low: inside.first().copied().unwrap_or(median),
        whisker_high: inside.last().copied().unwrap_or(median),
        outliers: v.len() - inside.len(),
        min: v[0],
        max: v[v.len() - 1],
    })
}
