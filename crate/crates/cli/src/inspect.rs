//! Plain-text versions of the pattern and county panels. Everything printed
//! comes from the same store queries the API serves.

use std::fmt::Write as _;

use riskmap_core::dataset::global_stats;
use riskmap_core::patternstore::PatternStore;
use riskmap_core::{DataMatrix, TargetTimeSeries};

fn range(r: Option<[f64; 2]>) -> String {
    r.map_or("n/a".to_string(), |[lo, hi]| format!("[{lo}, {hi}]"))
}

fn opt(v: Option<f64>) -> String {
    v.map_or("n/a".to_string(), |v| format!("{v}"))
}

pub fn pattern(store: &PatternStore, matrix: &DataMatrix, id: &str) -> anyhow::Result<String> {
    let stats = global_stats(matrix);
    let d = store.pattern_display(matrix, &stats, id)?;
    let mut s = String::new();
    let _ = writeln!(s, "pattern {}", d.pattern_id);
    let _ = writeln!(s, "rank {} of {}", d.rank, store.patterns().len());
    let _ = writeln!(s, "direction {:?}", d.direction);
    let _ = writeln!(
        s,
        "mean {} {:.4} (all counties {:.4})",
        matrix.target_name(),
        d.mean_target,
        store.set().global_target_mean
    );
    let _ = writeln!(s, "p {:.3e}, adjusted {:.3e}", d.p_value, d.p_adjusted);
    let _ = writeln!(s, "constraints:");
    for row in &d.constraints {
        let [lo, hi] = row.pattern_range;
        let _ = writeln!(
            s,
            "  {}: [{lo}, {hi}] of US {}  contribution {:.3}",
            row.feature,
            range(row.us_range),
            row.contribution
        );
    }
    let _ = writeln!(s, "members ({}): {}", d.members.len(), d.members.join(" "));
    Ok(s)
}

pub fn county(
    store: &PatternStore,
    matrix: &DataMatrix,
    series: Option<&TargetTimeSeries>,
    fips: &str,
) -> anyhow::Result<String> {
    let stats = global_stats(matrix);
    let p = store.county_profile(matrix, &stats, series, fips)?;
    let mut s = String::new();
    let _ = writeln!(s, "county {} {}, {}", p.fips, p.name, p.state);
    let _ = writeln!(s, "{} {}", matrix.target_name(), opt(p.target_value));
    if let Some(ts) = &p.target_series {
        let points: Vec<String> = ts
            .dates
            .iter()
            .zip(&ts.values)
            .map(|(d, v)| format!("{d} {v}"))
            .collect();
        let _ = writeln!(s, "over time: {}", points.join(", "));
    }
    if p.pattern_ids.is_empty() {
        let _ = writeln!(s, "no risk patterns");
        return Ok(s);
    }
    let _ = writeln!(s, "patterns ({}):", p.pattern_ids.len());
    for id in &p.pattern_ids {
        let (rank, pat) = store.get(id).expect("profile ids come from the store");
        let _ = writeln!(s, "  rank {rank}  mean {:.4}  {id}", pat.mean_target);
    }
    let _ = writeln!(s, "top risk factors:");
    for f in &p.top_risk_factors {
        let _ = writeln!(
            s,
            "  {}: {} (state {}, US {}, US mean {}) in {} patterns",
            f.feature,
            opt(f.county_value),
            range(f.state_range),
            range(f.us_range),
            f.us_mean.map_or("n/a".to_string(), |m| format!("{m:.4}")),
            f.frequency
        );
    }
    Ok(s)
}
