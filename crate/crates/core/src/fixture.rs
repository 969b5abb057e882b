//! A small hand-built county dataset and pattern store for demos and
//! end-to-end tests of the serving layer.
//!
//! Pattern constraints are chosen by hand. Members, means, p-values and
//! contribution weights are computed from the raw matrix, so the store is
//! internally consistent with the data it ships with.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Days, NaiveDate, Utc};
use serde_json::json;

use crate::dataset::{read_timeseries, CountyKey, DataMatrix, SchemaConfig, TargetTimeSeries};
use crate::miner::{
    contribution_scores, pattern_id, sort_patterns, Constraint, Direction, MiningConfig, Pattern, TargetTester,
};
use crate::patternstore::{self, PatternSet, StoreError};
use crate::stats::bh_adjust;

pub const HARTFORD: &str = "09003";
pub const CAMERON: &str = "48061";
pub const MCKINLEY: &str = "35031";
/// Has a target but falls in no pattern.
pub const NO_PATTERN: &str = "53001";
pub const MISSING_TARGET: &str = "39101";

pub const MINORITY: &str = "% minority population";
pub const GPA: &str = "avg. GPA";
pub const POVERTY: &str = "poverty rate";
pub const AGED: &str = "% aged 65+";
pub const DENSITY: &str = "population density";
pub const TARGET: &str = "death_rate";

const FEATURES: [&str; 5] = [MINORITY, GPA, POVERTY, AGED, DENSITY];

type Row = (&'static str, &'static str, &'static str, [f64; 5], Option<f64>);

#[rustfmt::skip]
const COUNTIES: [Row; 21] = [
    ("48061", "Cameron", "TX",    [95.0, 2.6, 27.0, 14.0, 450.0], Some(190.0)),
    ("48215", "Hidalgo", "TX",    [93.0, 2.7, 29.0, 11.5, 550.0], Some(120.0)),
    ("48479", "Webb", "TX",       [96.5, 2.8, 26.0, 10.0, 80.0], Some(110.0)),
    ("35031", "McKinley", "NM",   [82.0, 2.9, 33.0, 12.0, 13.0], Some(200.0)),
    ("35045", "San Juan", "NM",   [45.0, 3.7, 20.0, 14.5, 23.0], Some(60.0)),
    ("35001", "Bernalillo", "NM", [60.0, 2.4, 17.0, 15.5, 580.0], Some(40.0)),
    ("09003", "Hartford", "CT",   [37.6, 3.1, 11.0, 16.5, 1200.0], Some(150.0)),
    ("09001", "Fairfield", "CT",  [33.0, 3.5, 9.0, 15.5, 1500.0], Some(70.0)),
    ("09009", "New Haven", "CT",  [36.0, 3.2, 12.0, 16.8, 1400.0], Some(150.0)),
    ("34031", "Passaic", "NJ",    [58.0, 3.0, 16.0, 13.5, 2600.0], Some(170.0)),
    ("34017", "Hudson", "NJ",     [70.0, 3.0, 15.0, 11.0, 14000.0], Some(175.0)),
    ("34013", "Essex", "NJ",      [65.0, 2.9, 16.5, 13.0, 6200.0], Some(115.0)),
    ("04001", "Apache", "AZ",     [99.2, 2.5, 35.0, 13.0, 6.0], Some(185.0)),
    ("04013", "Maricopa", "AZ",   [45.0, 3.3, 13.0, 15.0, 480.0], Some(20.0)),
    ("13101", "Echols", "GA",     [38.5, 0.0, 22.0, 12.0, 10.0], Some(30.0)),
    ("39001", "Adams", "OH",      [3.0, 4.0, 18.0, 18.0, 48.0], Some(5.0)),
    ("53033", "King", "WA",       [40.0, 3.6, 8.0, 13.5, 1000.0], Some(10.0)),
    ("39035", "Cuyahoga", "OH",   [38.0, 3.1, 18.0, 17.0, 2700.0], Some(50.0)),
    ("53001", "Adams", "WA",      [0.0, 3.3, 15.0, 12.0, 10.0], Some(2.0)),
    ("13121", "Fulton", "GA",     [55.0, 3.2, 14.0, 11.5, 1900.0], Some(35.0)),
    ("39101", "Marion", "OH",     [8.0, 3.4, 14.0, 18.5, 160.0], None),
];

#[rustfmt::skip]
const PATTERNS: [&[(&str, f64, f64)]; 12] = [
    &[(POVERTY, 26.0, 35.0), (GPA, 2.5, 2.9)],
    &[(DENSITY, 2600.0, 14000.0), (MINORITY, 58.0, 70.0)],
    &[(AGED, 16.0, 17.0), (DENSITY, 1000.0, 1400.0)],
    &[(GPA, 2.4, 2.9), (MINORITY, 60.0, 99.2)],
    &[(GPA, 2.4, 2.9), (AGED, 12.0, 15.5)],
    &[(MINORITY, 37.6, 99.2), (AGED, 10.0, 16.8)],
    &[(DENSITY, 2600.0, 14000.0)],
    &[(POVERTY, 20.0, 35.0), (MINORITY, 45.0, 99.2)],
    &[(AGED, 10.0, 11.5), (MINORITY, 82.0, 99.2)],
    &[(GPA, 3.0, 3.2), (DENSITY, 1200.0, 14000.0)],
    &[(POVERTY, 9.0, 12.0), (AGED, 15.5, 16.8)],
    &[(MINORITY, 55.0, 70.0), (GPA, 2.4, 3.2), (POVERTY, 14.0, 17.0)],
];

/// Date axis of the fixture time series.
pub fn dates() -> Vec<NaiveDate> {
    let start = NaiveDate::from_ymd_opt(2020, 5, 1).expect("valid date");
    (0..4).map(|k| start + Days::new(7 * k)).collect()
}

pub fn matrix() -> DataMatrix {
    let counties = COUNTIES
        .iter()
        .map(|(fips, name, state, _, _)| CountyKey {
            fips: fips.to_string(),
            name: name.to_string(),
            state: state.to_string(),
        })
        .collect();
    let values = COUNTIES.iter().flat_map(|r| r.3.map(Some)).collect();
    let target = COUNTIES.iter().map(|r| r.4).collect();
    let names = FEATURES.iter().map(|s| s.to_string()).collect();
    DataMatrix::new(counties, names, values, target, TARGET).expect("fixture matrix is well formed")
}

pub fn schema() -> SchemaConfig {
    SchemaConfig::new(TARGET)
}

/// Wide CSV for the time series. Hartford's raw row dips (5 then 4) so the
/// loader has something to clamp.
pub fn timeseries_csv() -> String {
    let mut out = String::from("fips");
    for d in dates() {
        out.push_str(&format!(",{}", d.format("%Y-%m-%d")));
    }
    out.push('\n');
    for (fips, _, _, _, target) in COUNTIES {
        let row = if fips == HARTFORD {
            "0,5,4,12".to_string()
        } else {
            let end = target.unwrap_or(0.0);
            [0.1, 0.3, 0.6, 1.0]
                .map(|f| format!("{}", (end * f * 10.0).round() / 10.0))
                .join(",")
        };
        out.push_str(&format!("{fips},{row}\n"));
    }
    out
}

pub fn timeseries() -> TargetTimeSeries {
    read_timeseries(timeseries_csv().as_bytes())
        .expect("fixture series parses")
        .series
}

/// One square per county on a grid, with `GEOID` and `fips` properties.
pub fn geojson() -> String {
    let features: Vec<_> = COUNTIES
        .iter()
        .enumerate()
        .map(|(i, (fips, name, state, _, _))| {
            let x = -120.0 + 3.0 * (i % 7) as f64;
            let y = 30.0 + 3.0 * (i / 7) as f64;
            json!({
                "type": "Feature",
                "properties": { "GEOID": fips, "fips": fips, "name": name, "state": state },
                "geometry": {
                    "type": "Polygon",
                    "coordinates": [[[x, y], [x + 2.5, y], [x + 2.5, y + 2.5], [x, y + 2.5], [x, y]]]
                }
            })
        })
        .collect();
    serde_json::to_string(&json!({ "type": "FeatureCollection", "features": features })).expect("serializable")
}

fn build_pattern(matrix: &DataMatrix, tester: &TargetTester, spec: &[(&str, f64, f64)]) -> (Pattern, Vec<usize>) {
    let constraints: Vec<Constraint> = spec
        .iter()
        .map(|&(f, lo, hi)| Constraint {
            feature: f.to_string(),
            lo,
            hi,
        })
        .collect();
    let mut p = Pattern {
        id: pattern_id(&constraints),
        constraints,
        members: Vec::new(),
        mean_target: 0.0,
        p_value: 1.0,
        p_adjusted: 1.0,
        direction: Direction::High,
        contributions: Vec::new(),
    };
    let inside: Vec<usize> = tester
        .rows()
        .iter()
        .enumerate()
        .filter(|&(_, &row)| p.matches_row(matrix, row))
        .map(|(k, _)| k)
        .collect();
    p.members = inside
        .iter()
        .map(|&k| matrix.counties()[tester.rows()[k]].fips.clone())
        .collect();
    p.mean_target = tester.mean_of(&inside);
    (p, inside)
}

/// The fixture's twelve patterns, in display order.
pub fn pattern_set() -> PatternSet {
    let m = matrix();
    let tester = TargetTester::new(&m);
    let mut patterns: Vec<Pattern> = PATTERNS
        .iter()
        .map(|spec| {
            let (mut p, inside) = build_pattern(&m, &tester, spec);
            p.p_value = tester.test(&inside, Direction::High).map_or(1.0, |o| o.p);
            p
        })
        .collect();
    let adjusted = bh_adjust(&patterns.iter().map(|p| p.p_value).collect::<Vec<_>>());
    for (p, adj) in patterns.iter_mut().zip(adjusted) {
        p.p_adjusted = adj;
        p.contributions = contribution_scores(p, &m);
    }
    sort_patterns(&mut patterns);
    let mut set = PatternSet::new(
        patterns,
        &m,
        MiningConfig {
            min_support: 2,
            ..MiningConfig::default()
        },
    );
    set.created_at = DateTime::<Utc>::from_timestamp(1_589_500_800, 0).expect("valid timestamp");
    set
}

/// Id of the pattern whose minority-population constraint is [37.6, 99.2].
pub fn minority_pattern_id() -> String {
    pattern_set()
        .patterns
        .iter()
        .find(|p| {
            p.constraints
                .iter()
                .any(|c| c.feature == MINORITY && c.lo == 37.6 && c.hi == 99.2)
        })
        .expect("fixture contains the minority pattern")
        .id
        .clone()
}

#[derive(Debug, Clone)]
pub struct FixturePaths {
    pub matrix: PathBuf,
    pub schema: PathBuf,
    pub timeseries: PathBuf,
    pub geojson: PathBuf,
    pub store: PathBuf,
}

/// Writes every fixture artifact into `dir`.
pub fn write_all(dir: &Path) -> Result<FixturePaths, StoreError> {
    let paths = FixturePaths {
        matrix: dir.join("matrix.csv"),
        schema: dir.join("schema.conf"),
        timeseries: dir.join("timeseries.csv"),
        geojson: dir.join("counties.geojson"),
        store: dir.join("store.json"),
    };
    let write = |path: &Path, text: String| {
        std::fs::write(path, text).map_err(|source| StoreError::Io {
            path: path.display().to_string(),
            source,
        })
    };
    std::fs::create_dir_all(dir).map_err(|source| StoreError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    write(&paths.matrix, matrix().to_canonical_csv())?;
    write(&paths.schema, schema().to_text())?;
    write(&paths.timeseries, timeseries_csv())?;
    write(&paths.geojson, geojson())?;
    patternstore::save(&pattern_set(), &paths.store)?;
    Ok(paths)
}
