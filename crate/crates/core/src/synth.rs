//! Synthetic county data with a known answer.
//!
//! [`planted`] draws standard-normal features and shifts the target of the
//! counties inside one 3-feature top-tercile cell. [`growth_series`] grants a
//! chosen member set a fixed multiple of the national target increment.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Days, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::{CountyKey, DataMatrix, TargetTimeSeries};

const STATES: [&str; 8] = ["AZ", "CT", "NJ", "NM", "TX", "GA", "OH", "WA"];

#[derive(Debug, Clone)]
pub struct PlantedConfig {
    pub n_counties: usize,
    pub n_features: usize,
    pub planted_features: Vec<usize>,
    /// Target shift inside the cell, in target standard deviations.
    pub shift_sigma: f64,
    pub target_mean: f64,
    pub target_sd: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            n_counties: 3000,
            n_features: 20,
            planted_features: vec![0, 1, 2],
            shift_sigma: 2.0,
            target_mean: 10.0,
            target_sd: 1.0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedData {
    pub matrix: DataMatrix,
    /// Fips inside the planted cell, in row order.
    pub planted_members: Vec<String>,
    pub planted_features: Vec<usize>,
    /// Per feature, the smallest value counted as top tercile.
    pub tercile_cuts: Vec<f64>,
}

/// Value at sorted position `floor(2n/3)`: values at or above it form the
/// top tercile.
fn top_tercile_cut(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted[2 * sorted.len() / 3]
}

pub fn planted(cfg: &PlantedConfig) -> PlantedData {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (n, m) = (cfg.n_counties, cfg.n_features);
    let columns: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let cuts: Vec<f64> = columns.iter().map(|c| top_tercile_cut(c)).collect();
    let inside: Vec<bool> = (0..n)
        .map(|i| cfg.planted_features.iter().all(|&f| f < m && columns[f][i] >= cuts[f]))
        .collect();
    let target: Vec<Option<f64>> = (0..n)
        .map(|i| {
            let noise: f64 = StandardNormal.sample(&mut rng);
            let shift = if inside[i] { cfg.shift_sigma } else { 0.0 };
            Some(cfg.target_mean + cfg.target_sd * (noise + shift))
        })
        .collect();
    let counties: Vec<CountyKey> = (0..n)
        .map(|i| CountyKey {
            fips: format!("{:05}", 1001 + i),
            name: format!("Synthetic {i}"),
            state: STATES[rng.random_range(0..STATES.len())].to_string(),
        })
        .collect();
    let values = (0..n).flat_map(|i| columns.iter().map(move |c| Some(c[i]))).collect();
    let names = (0..m).map(|j| format!("f{j:02}")).collect();
    let planted_members = (0..n)
        .filter(|&i| inside[i])
        .map(|i| counties[i].fips.clone())
        .collect();
    let matrix = DataMatrix::new(counties, names, values, target, "target").expect("well-formed synthetic");
    PlantedData {
        matrix,
        planted_members,
        planted_features: cfg.planted_features.clone(),
        tercile_cuts: cuts,
    }
}

/// The same matrix with its target values permuted at random.
pub fn shuffled_target(matrix: &DataMatrix, seed: u64) -> DataMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut target: Vec<Option<f64>> = (0..matrix.n_counties()).map(|r| matrix.target(r)).collect();
    target.shuffle(&mut rng);
    matrix.with_target(target).expect("same shape")
}

pub fn jaccard(a: &[String], b: &[String]) -> f64 {
    let a: BTreeSet<&String> = a.iter().collect();
    let b: BTreeSet<&String> = b.iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Weekly cumulative series in which every county in `boosted` receives
/// exactly `ratio` times the national mean increment at each step, and the
/// others draw increments uniformly from `[0, 2)`.
///
/// With `k` boosted counties out of `N`, the national mean increment `g`
/// solves `g = (S + k·ratio·g) / N`, where `S` is the sum of the other
/// increments, so `g = S / (N − k·ratio)`.
pub fn growth_series(
    matrix: &DataMatrix,
    boosted: &[String],
    ratio: f64,
    n_dates: usize,
    seed: u64,
) -> TargetTimeSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let boosted: BTreeSet<&str> = boosted.iter().map(String::as_str).collect();
    let fips: Vec<&str> = matrix.counties().iter().map(|c| c.fips.as_str()).collect();
    let n = fips.len() as f64;
    let k = fips.iter().filter(|f| boosted.contains(*f)).count() as f64;
    assert!(n > k * ratio, "boosted share too large for the requested ratio");
    let start = NaiveDate::from_ymd_opt(2020, 5, 1).expect("valid date");
    let dates: Vec<NaiveDate> = (0..n_dates).map(|t| start + Days::new(7 * t as u64)).collect();
    let mut current: Vec<f64> = fips.iter().map(|_| rng.random_range(0.0..5.0)).collect();
    let mut rows: Vec<Vec<f64>> = current.iter().map(|&c| vec![c]).collect();
    for _ in 1..n_dates {
        let incs: Vec<Option<f64>> = fips
            .iter()
            .map(|f| (!boosted.contains(f)).then(|| rng.random_range(0.0..2.0)))
            .collect();
        let s: f64 = incs.iter().flatten().sum();
        let g = s / (n - k * ratio);
        for (i, inc) in incs.iter().enumerate() {
            current[i] += inc.unwrap_or(ratio * g);
            rows[i].push(current[i]);
        }
    }
    let series: BTreeMap<String, Vec<f64>> = fips.iter().map(|f| f.to_string()).zip(rows).collect();
    TargetTimeSeries { dates, series }
}
