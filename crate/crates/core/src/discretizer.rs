//! Equal-frequency binning of features into interval items.
//!
//! Each feature is cut into base bins at empirical quantiles. Items are the
//! base bins plus contiguous runs of up to `max_merge_run` bins. A run that
//! spans the whole feature is not an item, because it constrains nothing.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::dataset::{DataMatrix, FeatureKind};
use crate::par::Execution;

#[derive(Debug, Error, PartialEq)]
pub enum DiscretizeError {
    #[error("bins_per_feature must be at least 2, got {0}")]
    TooFewBins(usize),
    #[error("max_merge_run must be at least 1, got {0}")]
    BadMergeRun(usize),
}

/// Cut points of one feature. A value falls into bin `k` where `k` is the
/// number of thresholds `<= value`, so bins are `[t_{k}, t_{k+1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseBins {
    pub feature_id: usize,
    pub thresholds: Vec<f64>,
    /// Zero for constant or all-missing features, which are not mined.
    pub n_bins: usize,
}

impl BaseBins {
    pub fn bin_of(&self, value: f64) -> usize {
        self.thresholds.partition_point(|&t| t <= value)
    }
}

/// A closed interval constraint on one feature, backed by a contiguous run of
/// base bins. `lo`/`hi` are the observed extremes of the values in the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub feature_id: usize,
    pub lo: f64,
    pub hi: f64,
    pub lo_bin: usize,
    pub hi_bin: usize,
}

impl Interval {
    pub fn contains(&self, value: f64) -> bool {
        self.lo <= value && value <= self.hi
    }
}

/// Items plus, for every county row, the items it holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemUniverse {
    pub items: Vec<Interval>,
    pub transactions: Vec<Vec<usize>>,
}

impl ItemUniverse {
    /// Feature of each item, for keeping one constraint per feature.
    pub fn item_features(&self) -> Vec<usize> {
        self.items.iter().map(|i| i.feature_id).collect()
    }
}

/// Quantile thresholds for one sorted, non-empty column.
fn quantile_thresholds(sorted: &[f64], bins: usize) -> Vec<f64> {
    let n = sorted.len();
    let min = sorted[0];
    let mut out: Vec<f64> = Vec::with_capacity(bins - 1);
    for i in 1..bins {
        let t = sorted[i * n / bins];
        if t > min && out.last().is_none_or(|&last| t > last) {
            out.push(t);
        }
    }
    out
}

/// Equal-frequency base bins for every feature, in feature order.
pub fn build_base_bins(
    matrix: &DataMatrix,
    bins_per_feature: usize,
    exec: Execution,
) -> Result<Vec<BaseBins>, DiscretizeError> {
    if bins_per_feature < 2 {
        return Err(DiscretizeError::TooFewBins(bins_per_feature));
    }
    let out = exec.map(matrix.features(), |spec| {
        let j = spec.feature_id;
        if matrix.is_constant(j) {
            warn!(feature = %spec.name, "constant feature excluded from mining");
            return BaseBins {
                feature_id: j,
                thresholds: Vec::new(),
                n_bins: 0,
            };
        }
        let thresholds = match spec.kind {
            FeatureKind::Binary => vec![1.0],
            FeatureKind::Numeric => {
                let mut col: Vec<f64> = matrix.column(j).map(|(_, v)| v).collect();
                col.sort_by(f64::total_cmp);
                quantile_thresholds(&col, bins_per_feature)
            }
        };
        BaseBins {
            feature_id: j,
            n_bins: thresholds.len() + 1,
            thresholds,
        }
    });
    Ok(out)
}

/// Builds the item universe from base bins.
///
/// Items are ordered by feature, then run length, then starting bin.
pub fn build_item_universe(
    matrix: &DataMatrix,
    bins: &[BaseBins],
    max_merge_run: usize,
) -> Result<ItemUniverse, DiscretizeError> {
    if max_merge_run < 1 {
        return Err(DiscretizeError::BadMergeRun(max_merge_run));
    }
    let n = matrix.n_counties();
    let mut items = Vec::new();
    let mut transactions = vec![Vec::new(); n];
    for b in bins.iter().filter(|b| b.n_bins >= 2) {
        let j = b.feature_id;
        // Per-bin observed extremes and per-county bin index.
        let mut extremes = vec![(f64::INFINITY, f64::NEG_INFINITY); b.n_bins];
        let mut county_bin = vec![None; n];
        for (row, v) in matrix.column(j) {
            let k = b.bin_of(v);
            extremes[k].0 = extremes[k].0.min(v);
            extremes[k].1 = extremes[k].1.max(v);
            county_bin[row] = Some(k);
        }
        let first_item = items.len();
        let mut runs = Vec::new();
        for len in 1..=max_merge_run.min(b.n_bins - 1) {
            for start in 0..=(b.n_bins - len) {
                runs.push((start, start + len - 1));
            }
        }
        for &(lo_bin, hi_bin) in &runs {
            items.push(Interval {
                feature_id: j,
                lo: extremes[lo_bin].0,
                hi: extremes[hi_bin].1,
                lo_bin,
                hi_bin,
            });
        }
        for (row, bin) in county_bin.iter().enumerate() {
            let Some(k) = *bin else { continue };
            for (offset, &(lo_bin, hi_bin)) in runs.iter().enumerate() {
                if lo_bin <= k && k <= hi_bin {
                    transactions[row].push(first_item + offset);
                }
            }
        }
    }
    for t in &mut transactions {
        t.sort_unstable();
    }
    Ok(ItemUniverse { items, transactions })
}
