//! Small descriptive-statistics helpers shared by pair mining and metrics.

use crate::error::{Error, Result};

/// Percentile `p` ∈ [0, 100] of already sorted values, linear interpolation
/// between closest ranks (position `p/100 · (n − 1)`).
pub fn percentile_sorted(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::Domain("percentile of an empty set".into()));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::Domain(format!("percentile {p} outside [0, 100]")));
    }
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

/// Sorted copy; rejects NaN.
pub fn sorted(values: &[f64]) -> Result<Vec<f64>> {
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Domain("NaN in statistics input".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    percentile_sorted(&sorted(values)?, p)
}

pub fn median(values: &[f64]) -> Result<f64> {
    percentile(values, 50.0)
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}
