//! Forward backtest of a pattern set against a cumulative target series.
//!
//! Growth is the difference of cumulative values between two dates, not a
//! percentage. Counties with a near-zero baseline would otherwise dominate.

use std::fmt::Write as _;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::TargetTimeSeries;
use crate::patternstore::PatternSet;

pub const DEFAULT_THRESHOLD: f64 = 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("t0 ({t0}) must be before t1 ({t1})")]
    WindowOrder { t0: NaiveDate, t1: NaiveDate },
    #[error("{0} is before the first date of the series")]
    BeforeSeries(NaiveDate),
    #[error("t0 and t1 snap to the same series date {0}")]
    EmptyWindow(NaiveDate),
    #[error("no national growth in window")]
    NoNationalGrowth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternGrowth {
    pub pattern_id: String,
    pub rank: usize,
    /// Mean growth of members present in the series; `None` if none are.
    pub member_growth: Option<f64>,
    pub national_growth: f64,
    pub ratio: Option<f64>,
    pub members_used: usize,
    /// Members absent from the series.
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub t0: NaiveDate,
    pub t1: NaiveDate,
    /// Dates that were not on the axis and were moved to the nearest
    /// earlier one.
    pub notes: Vec<String>,
    pub threshold: f64,
    pub national_growth: Option<f64>,
    pub per_pattern: Vec<PatternGrowth>,
    /// `None` for an empty pattern set.
    pub share_exceeding: Option<f64>,
}

impl GrowthReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "window {} .. {}", self.t0, self.t1);
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        if self.per_pattern.is_empty() {
            let _ = writeln!(out, "0 patterns");
            return out;
        }
        let _ = writeln!(out, "national growth {:.4}", self.national_growth.unwrap_or(f64::NAN));
        let _ = writeln!(
            out,
            "{:>4}  {:<16}  {:>12}  {:>8}  {:>7}  {:>8}",
            "rank", "pattern", "growth", "ratio", "members", "excluded"
        );
        for p in &self.per_pattern {
            let fmt = |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |v| format!("{v:.prec$}"));
            let _ = writeln!(
                out,
                "{:>4}  {:<16}  {:>12}  {:>8}  {:>7}  {:>8}",
                p.rank,
                &p.pattern_id[..p.pattern_id.len().min(16)],
                fmt(p.member_growth, 4),
                fmt(p.ratio, 3),
                p.members_used,
                p.excluded
            );
        }
        let _ = writeln!(
            out,
            "share with ratio >= {}: {:.3}",
            self.threshold,
            self.share_exceeding.unwrap_or(0.0)
        );
        out
    }
}

/// Axis positions for `t0` and `t1`, snapping to earlier dates.
fn window(ts: &TargetTimeSeries, t0: NaiveDate, t1: NaiveDate) -> Result<(usize, usize, Vec<String>), EvalError> {
    if t0 >= t1 {
        return Err(EvalError::WindowOrder { t0, t1 });
    }
    let mut notes = Vec::new();
    let mut snap = |d: NaiveDate| {
        let i = ts.snap(d).ok_or(EvalError::BeforeSeries(d))?;
        if ts.dates[i] != d {
            notes.push(format!("{d} snapped to {}", ts.dates[i]));
        }
        Ok(i)
    };
    let (i0, i1) = (snap(t0)?, snap(t1)?);
    if i0 == i1 {
        return Err(EvalError::EmptyWindow(ts.dates[i0]));
    }
    Ok((i0, i1, notes))
}

pub fn evaluate_growth(
    set: &PatternSet,
    ts: &TargetTimeSeries,
    t0: NaiveDate,
    t1: NaiveDate,
    threshold: f64,
) -> Result<GrowthReport, EvalError> {
    if set.patterns.is_empty() {
        if t0 >= t1 {
            return Err(EvalError::WindowOrder { t0, t1 });
        }
        return Ok(GrowthReport {
            t0,
            t1,
            notes: Vec::new(),
            threshold,
            national_growth: None,
            per_pattern: Vec::new(),
            share_exceeding: None,
        });
    }
    let (i0, i1, notes) = window(ts, t0, t1)?;
    let delta = |s: &[f64]| s[i1] - s[i0];
    let national = if ts.series.is_empty() {
        0.0
    } else {
        ts.series.values().map(|s| delta(s)).sum::<f64>() / ts.series.len() as f64
    };
    if national <= 0.0 {
        return Err(EvalError::NoNationalGrowth);
    }
    let per_pattern: Vec<PatternGrowth> = set
        .patterns
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let deltas: Vec<f64> = p.members.iter().filter_map(|f| ts.get(f)).map(delta).collect();
            let member_growth = (!deltas.is_empty()).then(|| deltas.iter().sum::<f64>() / deltas.len() as f64);
            PatternGrowth {
                pattern_id: p.id.clone(),
                rank: i + 1,
                member_growth,
                national_growth: national,
                ratio: member_growth.map(|g| g / national),
                members_used: deltas.len(),
                excluded: p.members.len() - deltas.len(),
            }
        })
        .collect();
    let exceeding = per_pattern
        .iter()
        .filter(|p| p.ratio.is_some_and(|r| r >= threshold))
        .count();
    Ok(GrowthReport {
        t0: ts.dates[i0],
        t1: ts.dates[i1],
        notes,
        threshold,
        national_growth: Some(national),
        share_exceeding: Some(exceeding as f64 / per_pattern.len() as f64),
        per_pattern,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewlyAffected {
    pub pattern_id: String,
    pub fips: Vec<String>,
}

/// Members at or below `floor` at `t0` and above it at `t1`, per pattern.
pub fn newly_affected(
    set: &PatternSet,
    ts: &TargetTimeSeries,
    t0: NaiveDate,
    t1: NaiveDate,
    floor: f64,
) -> Result<Vec<NewlyAffected>, EvalError> {
    let (i0, i1, _) = window(ts, t0, t1)?;
    Ok(set
        .patterns
        .iter()
        .map(|p| NewlyAffected {
            pattern_id: p.id.clone(),
            fips: p
                .members
                .iter()
                .filter(|f| ts.get(f).is_some_and(|s| s[i0] <= floor && s[i1] > floor))
                .cloned()
                .collect(),
        })
        .collect())
}
