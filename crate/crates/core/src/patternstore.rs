//! Persisted mining results and the queries the dashboard runs against them.
//!
//! The store is one JSON document:
//!
//! ```text
//! { schema_version, created_at, dataset_fingerprint, global_target_mean,
//!   config: { min_support, alpha, max_depth, bins_per_feature, max_merge_run, direction },
//!   patterns: [ { id, constraints: [{feature, lo, hi}], members: [fips...],
//!                 mean_target, p_value, p_adjusted, direction, contributions: [...] } ] }
//! ```
//!
//! The county → pattern index is rebuilt on load, never persisted.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write as _;
use std::path::Path;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DataMatrix, GlobalStats, TargetTimeSeries};
use crate::miner::{Direction, MiningConfig, Pattern};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt pattern store: {0}")]
    Corrupt(String),
    #[error("unsupported schema version {0}")]
    SchemaVersion(u32),
    #[error("unknown county {0}")]
    UnknownCounty(String),
    #[error("unknown pattern {0}")]
    UnknownPattern(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSet {
    pub schema_version: u32,
    pub created_at: DateTime<Utc>,
    pub dataset_fingerprint: String,
    pub global_target_mean: f64,
    pub config: MiningConfig,
    pub patterns: Vec<Pattern>,
}

impl PatternSet {
    /// Wraps already-ordered patterns with provenance from `matrix`.
    pub fn new(patterns: Vec<Pattern>, matrix: &DataMatrix, config: MiningConfig) -> Self {
        PatternSet {
            schema_version: SCHEMA_VERSION,
            created_at: Utc::now(),
            dataset_fingerprint: matrix.fingerprint(),
            global_target_mean: matrix.global_target_mean(),
            config,
            patterns,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pattern sets always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, StoreError> {
        let set: PatternSet = serde_json::from_str(text).map_err(|e| StoreError::Corrupt(e.to_string()))?;
        if set.schema_version != SCHEMA_VERSION {
            return Err(StoreError::SchemaVersion(set.schema_version));
        }
        let mut seen = HashSet::new();
        for p in &set.patterns {
            if !seen.insert(p.id.as_str()) {
                return Err(StoreError::Corrupt(format!("duplicate pattern id {}", p.id)));
            }
        }
        Ok(set)
    }

    /// Warning text when the store was mined from a different matrix.
    pub fn fingerprint_mismatch(&self, matrix: &DataMatrix) -> Option<String> {
        let actual = matrix.fingerprint();
        (actual != self.dataset_fingerprint).then(|| {
            format!(
                "pattern store was mined from dataset {} but the loaded matrix is {}",
                self.dataset_fingerprint, actual
            )
        })
    }

    pub fn depth_counts(&self) -> BTreeMap<usize, usize> {
        let mut out = BTreeMap::new();
        for p in &self.patterns {
            *out.entry(p.constraints.len()).or_default() += 1;
        }
        out
    }
}

/// Writes `set` to `path` through a temporary file and a rename, so readers
/// never observe a partial store.
pub fn save(set: &PatternSet, path: &Path) -> Result<(), StoreError> {
    let io = |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    };
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{file_name}.{}.tmp", std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(set.to_json().as_bytes())?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result.map_err(io)
}

pub fn load(path: &Path) -> Result<PatternSet, StoreError> {
    let text = std::fs::read_to_string(path).map_err(|source| StoreError::Io {
        path: path.display().to_string(),
        source,
    })?;
    PatternSet::from_json(&text)
}

/// One row of a bullet chart: a focus range inside a reference range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplayRow {
    pub feature: String,
    pub pattern_range: [f64; 2],
    pub us_range: Option<[f64; 2]>,
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternDisplay {
    pub pattern_id: String,
    pub rank: usize,
    pub direction: Direction,
    pub mean_target: f64,
    pub p_value: f64,
    pub p_adjusted: f64,
    pub constraints: Vec<DisplayRow>,
    pub contributions: Vec<f64>,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSummary {
    pub pattern_id: String,
    pub rank: usize,
    pub mean_target: f64,
    pub constraint_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskFactor {
    pub feature: String,
    pub county_value: Option<f64>,
    pub state_range: Option<[f64; 2]>,
    pub us_range: Option<[f64; 2]>,
    pub us_mean: Option<f64>,
    /// Number of the county's patterns that constrain this feature.
    pub frequency: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesView {
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountyProfile {
    pub fips: String,
    pub name: String,
    pub state: String,
    pub target_value: Option<f64>,
    pub target_series: Option<SeriesView>,
    pub pattern_ids: Vec<String>,
    pub top_risk_factors: Vec<RiskFactor>,
}

fn pair(r: Option<(f64, f64)>) -> Option<[f64; 2]> {
    r.map(|(a, b)| [a, b])
}

/// A loaded [`PatternSet`] with lookup indexes. Immutable once built.
#[derive(Debug, Clone)]
pub struct PatternStore {
    set: PatternSet,
    by_id: HashMap<String, usize>,
    by_county: HashMap<String, Vec<usize>>,
}

impl PatternStore {
    pub fn new(set: PatternSet) -> Self {
        let by_id = set
            .patterns
            .iter()
            .enumerate()
            .map(|(i, p)| (p.id.clone(), i))
            .collect();
        let mut by_county: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, p) in set.patterns.iter().enumerate() {
            for f in &p.members {
                by_county.entry(f.clone()).or_default().push(i);
            }
        }
        PatternStore { set, by_id, by_county }
    }

    pub fn set(&self) -> &PatternSet {
        &self.set
    }

    pub fn patterns(&self) -> &[Pattern] {
        &self.set.patterns
    }

    pub fn get(&self, id: &str) -> Option<(usize, &Pattern)> {
        self.by_id.get(id).map(|&i| (i + 1, &self.set.patterns[i]))
    }

    pub fn summaries(&self) -> Vec<PatternSummary> {
        self.set
            .patterns
            .iter()
            .enumerate()
            .map(|(i, p)| PatternSummary {
                pattern_id: p.id.clone(),
                rank: i + 1,
                mean_target: p.mean_target,
                constraint_count: p.constraints.len(),
            })
            .collect()
    }

    fn positions(&self, matrix: &DataMatrix, fips: &str) -> Result<&[usize], StoreError> {
        if matrix.row_of(fips).is_none() {
            return Err(StoreError::UnknownCounty(fips.to_string()));
        }
        Ok(self.by_county.get(fips).map_or(&[], Vec::as_slice))
    }

    /// Ids of the patterns containing `fips`, in set order.
    pub fn patterns_for_county(&self, matrix: &DataMatrix, fips: &str) -> Result<Vec<String>, StoreError> {
        Ok(self
            .positions(matrix, fips)?
            .iter()
            .map(|&i| self.set.patterns[i].id.clone())
            .collect())
    }

    /// Features ranked by how many of the county's patterns constrain them.
    /// Ties go to the feature whose strongest pattern has the smaller
    /// adjusted p, then to the alphabetically first name.
    pub fn top_risk_factors(
        &self,
        matrix: &DataMatrix,
        stats: &GlobalStats,
        fips: &str,
        k: usize,
    ) -> Result<Vec<RiskFactor>, StoreError> {
        let positions = self.positions(matrix, fips)?;
        let row = matrix.row_of(fips).expect("checked by positions");
        let state = &matrix.counties()[row].state;
        let mut tally: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
        for &i in positions {
            let p = &self.set.patterns[i];
            for c in &p.constraints {
                let e = tally.entry(c.feature.as_str()).or_insert((0, f64::INFINITY));
                e.0 += 1;
                e.1 = e.1.min(p.p_adjusted);
            }
        }
        let mut ranked: Vec<(&str, usize, f64)> = tally.into_iter().map(|(f, (n, p))| (f, n, p)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.total_cmp(&b.2)).then(a.0.cmp(b.0)));
        Ok(ranked
            .into_iter()
            .take(k)
            .map(|(name, frequency, _)| {
                let fid = matrix.feature_by_name(name).map(|f| f.feature_id);
                RiskFactor {
                    feature: name.to_string(),
                    county_value: fid.and_then(|f| matrix.value(row, f)),
                    state_range: fid.and_then(|f| pair(stats.state_range(state, f))),
                    us_range: fid.and_then(|f| pair(stats.us_range(f))),
                    us_mean: fid.and_then(|f| stats.feature_mean[f]),
                    frequency,
                }
            })
            .collect())
    }

    pub fn pattern_display(
        &self,
        matrix: &DataMatrix,
        stats: &GlobalStats,
        id: &str,
    ) -> Result<PatternDisplay, StoreError> {
        let (rank, p) = self.get(id).ok_or_else(|| StoreError::UnknownPattern(id.to_string()))?;
        let constraints = p
            .constraints
            .iter()
            .enumerate()
            .map(|(i, c)| DisplayRow {
                feature: c.feature.clone(),
                pattern_range: [c.lo, c.hi],
                us_range: matrix
                    .feature_by_name(&c.feature)
                    .and_then(|f| pair(stats.us_range(f.feature_id))),
                contribution: p.contributions.get(i).copied().unwrap_or(0.0),
            })
            .collect();
        Ok(PatternDisplay {
            pattern_id: p.id.clone(),
            rank,
            direction: p.direction,
            mean_target: p.mean_target,
            p_value: p.p_value,
            p_adjusted: p.p_adjusted,
            constraints,
            contributions: p.contributions.clone(),
            members: p.members.clone(),
        })
    }

    pub fn county_profile(
        &self,
        matrix: &DataMatrix,
        stats: &GlobalStats,
        series: Option<&TargetTimeSeries>,
        fips: &str,
    ) -> Result<CountyProfile, StoreError> {
        let pattern_ids = self.patterns_for_county(matrix, fips)?;
        let row = matrix.row_of(fips).expect("checked above");
        let county = &matrix.counties()[row];
        let target_series = series.and_then(|ts| {
            ts.get(fips).map(|v| SeriesView {
                dates: ts.dates.clone(),
                values: v.to_vec(),
            })
        });
        Ok(CountyProfile {
            fips: county.fips.clone(),
            name: county.name.clone(),
            state: county.state.clone(),
            target_value: matrix.target(row),
            target_series,
            pattern_ids,
            top_risk_factors: self.top_risk_factors(matrix, stats, fips, 3)?,
        })
    }
}
