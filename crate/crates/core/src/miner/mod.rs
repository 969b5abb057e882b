//! Significant hypercube patterns: discretize, enumerate frequent item
//! combinations, test, adjust, prune, score and order.

pub mod evaluate;
pub mod fpgrowth;

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::info;

use crate::dataset::DataMatrix;
use crate::discretizer::{build_base_bins, build_item_universe, DiscretizeError};
use crate::par::Execution;
use crate::patternstore::PatternSet;
use crate::stats::bh_adjust_ln;

pub use evaluate::{contribution_scores, Candidate, MiningContext, Rejection, TargetTester};
pub use fpgrowth::{fp_growth, FpGrowth, FrequentItemset, TransactionSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    High,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MiningDirection {
    #[default]
    High,
    Low,
    Both,
}

impl MiningDirection {
    fn directions(self) -> &'static [Direction] {
        match self {
            MiningDirection::High => &[Direction::High],
            MiningDirection::Low => &[Direction::Low],
            MiningDirection::Both => &[Direction::High, Direction::Low],
        }
    }
}

impl std::str::FromStr for MiningDirection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "high" => Ok(MiningDirection::High),
            "low" => Ok(MiningDirection::Low),
            "both" => Ok(MiningDirection::Both),
            _ => Err(format!("direction must be high, low or both, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningConfig {
    pub min_support: usize,
    /// Threshold on BH-adjusted p-values.
    pub alpha: f64,
    pub max_depth: usize,
    pub bins_per_feature: usize,
    pub max_merge_run: usize,
    pub direction: MiningDirection,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            min_support: 20,
            alpha: 0.01,
            max_depth: 3,
            bins_per_feature: 3,
            max_merge_run: 2,
            direction: MiningDirection::High,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<(), MineError> {
        let bad = |m: String| Err(MineError::Config(m));
        if self.min_support < 2 {
            return bad(format!("min_support must be >= 2, got {}", self.min_support));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must be in (0, 1), got {}", self.alpha));
        }
        if !(1..=3).contains(&self.max_depth) {
            return bad(format!("max_depth must be 1..=3, got {}", self.max_depth));
        }
        if self.bins_per_feature < 2 {
            return bad(format!("bins_per_feature must be >= 2, got {}", self.bins_per_feature));
        }
        if self.max_merge_run < 1 {
            return bad(format!("max_merge_run must be >= 1, got {}", self.max_merge_run));
        }
        Ok(())
    }

    /// Applies `key = value` overrides (CLI config files).
    pub fn apply_pairs(&mut self, pairs: &std::collections::BTreeMap<String, String>) -> Result<(), MineError> {
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T, MineError> {
            v.parse()
                .map_err(|_| MineError::Config(format!("{k}: cannot parse {v:?}")))
        }
        for (k, v) in pairs {
            match k.as_str() {
                "min_support" => self.min_support = num(k, v)?,
                "alpha" => self.alpha = num(k, v)?,
                "max_depth" => self.max_depth = num(k, v)?,
                "bins_per_feature" => self.bins_per_feature = num(k, v)?,
                "max_merge_run" => self.max_merge_run = num(k, v)?,
                "direction" => self.direction = v.parse().map_err(MineError::Config)?,
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum MineError {
    #[error("invalid mining config: {0}")]
    Config(String),
    #[error("need at least {need} counties with a target value, have {have}")]
    TooFewCounties { have: usize, need: usize },
    #[error(transparent)]
    Discretize(#[from] DiscretizeError),
}

/// One interval restriction, as stored and displayed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub feature: String,
    pub lo: f64,
    pub hi: f64,
}

impl Constraint {
    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pattern {
    pub id: String,
    pub constraints: Vec<Constraint>,
    /// Fips of every county inside the pattern that has a target value.
    pub members: Vec<String>,
    pub mean_target: f64,
    pub p_value: f64,
    pub p_adjusted: f64,
    pub direction: Direction,
    pub contributions: Vec<f64>,
}

impl Pattern {
    /// Does the county at `row` satisfy every constraint, judged on raw values?
    pub fn matches_row(&self, matrix: &DataMatrix, row: usize) -> bool {
        self.constraints.iter().all(|c| {
            matrix
                .feature_by_name(&c.feature)
                .and_then(|f| matrix.value(row, f.feature_id))
                .is_some_and(|v| c.contains(v))
        })
    }
}

/// Hex SHA-256 over `(feature, lo, hi)` triples in constraint order.
pub fn pattern_id(constraints: &[Constraint]) -> String {
    let mut canon = String::new();
    for c in constraints {
        let _ = write!(canon, "{}\u{1f}{}\u{1f}{}\u{1e}", c.feature, c.lo, c.hi);
    }
    hex::encode(Sha256::digest(canon.as_bytes()))
}

/// Orders patterns for display: high block by descending mean, then low
/// block by ascending mean; ties by id.
pub fn sort_patterns(patterns: &mut [Pattern]) {
    patterns.sort_by(|a, b| {
        let block = |p: &Pattern| (p.direction == Direction::Low) as u8;
        block(a).cmp(&block(b)).then_with(|| {
            let by_mean = match a.direction {
                Direction::High => b.mean_target.total_cmp(&a.mean_target),
                Direction::Low => a.mean_target.total_cmp(&b.mean_target),
            };
            by_mean.then_with(|| a.id.cmp(&b.id))
        })
    });
}

/// Mining with the default execution strategy.
pub fn mine(matrix: &DataMatrix, config: &MiningConfig) -> Result<PatternSet, MineError> {
    mine_with(matrix, config, Execution::default())
}

pub fn mine_with(matrix: &DataMatrix, config: &MiningConfig, exec: Execution) -> Result<PatternSet, MineError> {
    let patterns = mine_patterns(matrix, config, exec)?;
    Ok(PatternSet::new(patterns, matrix, config.clone()))
}

/// The pipeline behind [`mine`], returning ordered patterns only.
pub fn mine_patterns(matrix: &DataMatrix, config: &MiningConfig, exec: Execution) -> Result<Vec<Pattern>, MineError> {
    config.validate()?;
    let bins = build_base_bins(matrix, config.bins_per_feature, exec)?;
    let universe = build_item_universe(matrix, &bins, config.max_merge_run)?;
    let ctx = MiningContext::new(matrix, universe);
    if ctx.tester.len() < config.min_support {
        return Err(MineError::TooFewCounties {
            have: ctx.tester.len(),
            need: config.min_support,
        });
    }
    let groups = ctx.universe.item_features();
    let itemsets = FpGrowth::new(config.min_support, config.max_depth)
        .groups(&groups)
        .execution(exec)
        .run(&ctx.target_transactions());
    info!(
        items = ctx.universe.items.len(),
        itemsets = itemsets.len(),
        "frequent itemsets enumerated"
    );
    let mut out = Vec::new();
    for &direction in config.direction.directions() {
        let mut block = mine_direction(&ctx, &itemsets, direction, config, exec);
        sort_patterns(&mut block);
        out.extend(block);
    }
    Ok(out)
}

fn mine_direction(
    ctx: &MiningContext<'_>,
    itemsets: &[FrequentItemset],
    direction: Direction,
    config: &MiningConfig,
    exec: Execution,
) -> Vec<Pattern> {
    let candidates: Vec<Candidate> = exec
        .map(itemsets, |fi| ctx.evaluate(fi, direction).ok())
        .into_iter()
        .flatten()
        .collect();
    let ln_adj = bh_adjust_ln(&candidates.iter().map(|c| c.ln_p).collect::<Vec<_>>());
    let ln_alpha = config.alpha.ln();
    let global = ctx.tester.global_mean();
    let on_side = |mean: f64| match direction {
        Direction::High => mean > global,
        Direction::Low => mean < global,
    };
    let significant: Vec<(&Candidate, f64)> = candidates
        .iter()
        .zip(ln_adj)
        .filter(|(c, adj)| *adj <= ln_alpha && on_side(c.mean_target))
        .collect();
    let by_items: HashMap<&[usize], (f64, f64)> = significant
        .iter()
        .map(|(c, adj)| (c.item_ids.as_slice(), (*adj, c.mean_target)))
        .collect();
    let survivors: Vec<&(&Candidate, f64)> = significant
        .iter()
        .filter(|(c, adj)| !is_redundant(c, *adj, direction, &by_items))
        .collect();
    exec.map(&survivors, |(c, adj)| {
        let constraints: Vec<Constraint> = c.item_ids.iter().map(|&it| ctx.constraint(it)).collect();
        Pattern {
            id: pattern_id(&constraints),
            members: c
                .members
                .iter()
                .map(|&k| ctx.matrix.counties()[ctx.tester.rows()[k]].fips.clone())
                .collect(),
            mean_target: c.mean_target,
            p_value: c.p_value,
            p_adjusted: adj.exp(),
            direction,
            contributions: ctx.contributions(&c.item_ids, c.ln_p, direction),
            constraints,
        }
    })
}

/// A refinement is redundant when some strict sub-pattern is at least as
/// significant and at least as extreme in mean.
fn is_redundant(c: &Candidate, ln_adj: f64, direction: Direction, by_items: &HashMap<&[usize], (f64, f64)>) -> bool {
    let k = c.item_ids.len();
    if k < 2 {
        return false;
    }
    // Every non-empty strict subset, via bitmasks over at most 3 items.
    (1u32..(1 << k) - 1).any(|mask| {
        let subset: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).map(|i| c.item_ids[i]).collect();
        by_items.get(subset.as_slice()).is_some_and(|&(sub_adj, sub_mean)| {
            let as_extreme = match direction {
                Direction::High => sub_mean >= c.mean_target,
                Direction::Low => sub_mean <= c.mean_target,
            };
            sub_adj <= ln_adj && as_extreme
        })
    })
}
