//! Genuine/imposter pair mining from percentile thresholds of pairwise shape
//! RMSE.
//!
//! Pairs closer than the 1st percentile are genuine (label 0); pairs within a
//! relative band around the 25th percentile are imposters (label 1); all
//! other pairs are discarded.

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::MarkerChain;
use crate::metrics::shape_rmse;
use crate::stats::{percentile_sorted, sorted};

pub const LOW_PERCENTILE: f64 = 1.0;
pub const HIGH_PERCENTILE: f64 = 25.0;
pub const DEFAULT_BAND: f64 = 0.01;
pub const DEFAULT_PAIR_BUDGET: usize = 2_000_000;
/// Minimum number of RMSE values needed for threshold estimation.
pub const MIN_THRESHOLD_SAMPLES: usize = 100;

pub const GENUINE: u8 = 0;
pub const IMPOSTER: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRmse {
    pub a: usize,
    pub b: usize,
    pub rmse: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairThresholds {
    pub t_low: f64,
    pub t_high: f64,
    /// Relative half-width of the imposter band around `t_high`.
    pub band: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub a: usize,
    pub b: usize,
    pub label: u8,
}

/// Number of unordered pairs of `n` items.
pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Unordered pair with linear index `k` in the order (0,1), (0,2), (1,2),
/// (0,3), ...
pub fn pair_from_index(k: usize) -> (usize, usize) {
    let mut j = ((1.0 + (1.0 + 8.0 * k as f64).sqrt()) / 2.0) as usize;
    while j * (j - 1) / 2 > k {
        j -= 1;
    }
    while (j + 1) * j / 2 <= k {
        j += 1;
    }
    (k - j * (j - 1) / 2, j)
}

/// Pairwise RMSE for up to `budget` unordered pairs sampled uniformly without
/// replacement, or for every pair when the budget covers them all.
pub fn pairwise_rmse(targets: &[MarkerChain], budget: usize, seed: u64) -> Result<Vec<PairRmse>> {
    if targets.len() < 2 {
        return Err(Error::Domain("pair mining needs at least 2 samples".into()));
    }
    if budget == 0 {
        return Err(Error::Config("pair budget must be positive".into()));
    }
    let total = pair_count(targets.len());
    let indices: Vec<usize> = if budget >= total {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = index::sample(&mut rng, total, budget).into_vec();
        v.sort_unstable();
        v
    };
    indices
        .into_par_iter()
        .map(|k| {
            let (a, b) = pair_from_index(k);
            Ok(PairRmse {
                a,
                b,
                rmse: shape_rmse(&targets[a], &targets[b], false)?,
            })
        })
        .collect()
}

pub fn compute_thresholds(rmse: &[f64], band: f64) -> Result<PairThresholds> {
    if rmse.len() < MIN_THRESHOLD_SAMPLES {
        return Err(Error::Domain(format!(
            "{} RMSE values, at least {MIN_THRESHOLD_SAMPLES} needed for thresholds",
            rmse.len()
        )));
    }
    if !(band > 0.0 && band < 1.0) {
        return Err(Error::Config(format!("pair band {band} outside (0, 1)")));
    }
    let v = sorted(rmse)?;
    let t_low = percentile_sorted(&v, LOW_PERCENTILE)?;
    let t_high = percentile_sorted(&v, HIGH_PERCENTILE)?;
    if !(t_low > 0.0 && t_low < t_high) {
        return Err(Error::Domain(format!(
            "degenerate pair thresholds t_low={t_low} t_high={t_high}"
        )));
    }
    Ok(PairThresholds { t_low, t_high, band })
}

impl PairThresholds {
    pub fn label(&self, rmse: f64) -> Option<u8> {
        if rmse < self.t_low {
            Some(GENUINE)
        } else if (rmse - self.t_high).abs() <= self.band * self.t_high {
            Some(IMPOSTER)
        } else {
            None
        }
    }
}

pub fn label_pairs(stream: &[PairRmse], thresholds: &PairThresholds) -> Vec<LabeledPair> {
    stream
        .iter()
        .filter_map(|p| {
            thresholds
                .label(p.rmse)
                .map(|label| LabeledPair { a: p.a, b: p.b, label })
        })
        .collect()
}

/// Class-balanced, shuffled batches. The majority class is truncated to the
/// minority size, then to `max_pairs / 2` per class when given; every batch
/// holds as many genuine as imposter pairs.
pub fn build_pair_epoch(
    pairs: &[LabeledPair],
    batch_size: usize,
    max_pairs: Option<usize>,
    seed: u64,
) -> Result<Vec<Vec<LabeledPair>>> {
    if batch_size < 2 || batch_size % 2 != 0 {
        return Err(Error::Config(format!(
            "pair batch size must be even and >= 2, got {batch_size}"
        )));
    }
    let mut genuine: Vec<LabeledPair> = pairs.iter().copied().filter(|p| p.label == GENUINE).collect();
    let mut imposter: Vec<LabeledPair> = pairs.iter().copied().filter(|p| p.label == IMPOSTER).collect();
    if genuine.is_empty() || imposter.is_empty() {
        return Err(Error::Domain(format!(
            "{} genuine and {} imposter pairs; increase the pair budget",
            genuine.len(),
            imposter.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    genuine.shuffle(&mut rng);
    imposter.shuffle(&mut rng);
    let mut per_class = genuine.len().min(imposter.len());
    if let Some(m) = max_pairs {
        per_class = per_class.min((m / 2).max(1));
    }
    let half = batch_size / 2;
    let mut batches = Vec::with_capacity(per_class.div_ceil(half));
    for start in (0..per_class).step_by(half) {
        let end = (start + half).min(per_class);
        let mut batch: Vec<LabeledPair> = genuine[start..end]
            .iter()
            .chain(&imposter[start..end])
            .copied()
            .collect();
        batch.shuffle(&mut rng);
        batches.push(batch);
    }
    Ok(batches)
}
