//! County data matrix, target time series and feature ranges.
//!
//! Missing cells are first-class: they are stored as missing and never
//! imputed. `fips` is the only join key between the matrix, the time series
//! and the county geometry.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("duplicate column {0:?}")]
    DuplicateColumn(String),
    #[error("duplicate fips: {}", .0.join(", "))]
    DuplicateFips(Vec<String>),
    #[error("invalid fips {value:?} at row {row}")]
    InvalidFips { row: usize, value: String },
    #[error("non-numeric value {value:?} at row {row}, column {column:?}")]
    NonNumeric { row: usize, column: String, value: String },
    #[error("target column {0:?} is entirely missing")]
    TargetAllMissing(String),
    #[error("no date columns")]
    NoDateColumns,
    #[error("unparseable date header {0:?}")]
    BadDate(String),
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("matrix has no counties")]
    Empty,
    #[error("shape mismatch: {0}")]
    Shape(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Parses the `key = value` config format shared by the schema and the CLI.
///
/// Blank lines and lines starting with `#` are skipped. Later keys override
/// earlier ones.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>, DatasetError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(DatasetError::Config {
                line: i + 1,
                message: format!("expected `key = value`, got {line:?}"),
            });
        };
        let key = k.trim();
        if key.is_empty() {
            return Err(DatasetError::Config {
                line: i + 1,
                message: "empty key".into(),
            });
        }
        out.insert(key.to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// Names the special columns of a matrix CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaConfig {
    pub fips_column: String,
    pub name_column: String,
    pub state_column: String,
    pub target_column: String,
    pub exclude_columns: Vec<String>,
    /// Optional per-feature units, from `units.<column> = <unit>` keys.
    pub units: BTreeMap<String, String>,
}

impl SchemaConfig {
    pub fn new(target_column: impl Into<String>) -> Self {
        SchemaConfig {
            fips_column: "fips".into(),
            name_column: "name".into(),
            state_column: "state".into(),
            target_column: target_column.into(),
            exclude_columns: Vec::new(),
            units: BTreeMap::new(),
        }
    }

    /// Builds a schema from parsed key/value pairs. Keys that are not schema
    /// keys are ignored so the same file can carry mining settings.
    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self, DatasetError> {
        let target = pairs
            .get("target_column")
            .filter(|t| !t.is_empty())
            .ok_or_else(|| DatasetError::Config {
                line: 0,
                message: "target_column is required".into(),
            })?;
        let mut schema = SchemaConfig::new(target.clone());
        if let Some(v) = pairs.get("fips_column") {
            schema.fips_column = v.clone();
        }
        if let Some(v) = pairs.get("name_column") {
            schema.name_column = v.clone();
        }
        if let Some(v) = pairs.get("state_column") {
            schema.state_column = v.clone();
        }
        if let Some(v) = pairs.get("exclude_columns") {
            schema.exclude_columns = v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect();
        }
        for (k, v) in pairs {
            if let Some(col) = k.strip_prefix("units.") {
                schema.units.insert(col.to_string(), v.clone());
            }
        }
        Ok(schema)
    }

    pub fn parse(text: &str) -> Result<Self, DatasetError> {
        Self::from_pairs(&parse_key_values(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text)
    }

    /// Serializes back into the key/value format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "fips_column = {}", self.fips_column);
        let _ = writeln!(s, "name_column = {}", self.name_column);
        let _ = writeln!(s, "state_column = {}", self.state_column);
        let _ = writeln!(s, "target_column = {}", self.target_column);
        if !self.exclude_columns.is_empty() {
            let _ = writeln!(s, "exclude_columns = {}", self.exclude_columns.join(","));
        }
        for (col, unit) in &self.units {
            let _ = writeln!(s, "units.{col} = {unit}");
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub feature_id: usize,
    pub name: String,
    pub units: String,
    pub kind: FeatureKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CountyKey {
    pub fips: String,
    pub name: String,
    pub state: String,
}

/// Normalizes a fips code to five zero-padded digits.
pub fn normalize_fips(raw: &str) -> Option<String> {
    let t = raw.trim();
    if t.is_empty() || t.len() > 5 || !t.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some(format!("{t:0>5}"))
}

/// Parses one numeric cell. `Ok(None)` means missing.
pub(crate) fn parse_cell(raw: &str) -> Result<Option<f64>, ()> {
    let t = raw.trim();
    if t.is_empty() || t == "NA" {
        return Ok(None);
    }
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(()),
    }
}

/// Counties × features, plus one target column.
///
/// Values are stored row-major; a missing cell is `NaN` internally and
/// surfaces as `None` through the accessors.
#[derive(Debug, Clone)]
pub struct DataMatrix {
    counties: Vec<CountyKey>,
    features: Vec<FeatureSpec>,
    values: Vec<f64>,
    target: Vec<f64>,
    target_name: String,
    fips_index: HashMap<String, usize>,
}

impl PartialEq for DataMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.counties == other.counties
            && self.features == other.features
            && self.target_name == other.target_name
            && bits_eq(&self.values, &other.values)
            && bits_eq(&self.target, &other.target)
    }
}

fn bits_eq(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| (x.is_nan() && y.is_nan()) || x.to_bits() == y.to_bits())
}

fn detect_kind(values: impl Iterator<Item = f64>) -> FeatureKind {
    let mut seen = [false; 2];
    for v in values.filter(|v| !v.is_nan()) {
        if v == 0.0 {
            seen[0] = true;
        } else if v == 1.0 {
            seen[1] = true;
        } else {
            return FeatureKind::Numeric;
        }
    }
    if seen[0] && seen[1] {
        FeatureKind::Binary
    } else {
        FeatureKind::Numeric
    }
}

impl DataMatrix {
    /// Assembles a matrix from raw parts. `values` is row-major with `None`
    /// for missing cells. Feature kinds are inferred: a column whose values
    /// are exactly {0, 1} is binary.
    pub fn new(
        counties: Vec<CountyKey>,
        feature_names: Vec<String>,
        values: Vec<Option<f64>>,
        target: Vec<Option<f64>>,
        target_name: impl Into<String>,
    ) -> Result<Self, DatasetError> {
        let n = counties.len();
        let m = feature_names.len();
        if values.len() != n * m {
            return Err(DatasetError::Shape(format!(
                "{} values for {n} counties x {m} features",
                values.len()
            )));
        }
        if target.len() != n {
            return Err(DatasetError::Shape(format!(
                "{} target values for {n} counties",
                target.len()
            )));
        }
        let target_name = target_name.into();
        let mut names = BTreeSet::new();
        for name in &feature_names {
            if !names.insert(name.as_str()) {
                return Err(DatasetError::DuplicateColumn(name.clone()));
            }
        }
        let mut fips_index = HashMap::with_capacity(n);
        let mut dups = BTreeSet::new();
        for (i, c) in counties.iter().enumerate() {
            if fips_index.insert(c.fips.clone(), i).is_some() {
                dups.insert(c.fips.clone());
            }
        }
        if !dups.is_empty() {
            return Err(DatasetError::DuplicateFips(dups.into_iter().collect()));
        }
        if target.iter().all(Option::is_none) {
            return Err(DatasetError::TargetAllMissing(target_name));
        }
        let values: Vec<f64> = values.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect();
        let target: Vec<f64> = target.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect();
        let features = feature_names
            .into_iter()
            .enumerate()
            .map(|(j, name)| FeatureSpec {
                feature_id: j,
                name,
                units: String::new(),
                kind: detect_kind((0..n).map(|i| values[i * m + j])),
            })
            .collect();
        Ok(DataMatrix {
            counties,
            features,
            values,
            target,
            target_name,
            fips_index,
        })
    }

    pub fn n_counties(&self) -> usize {
        self.counties.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn counties(&self) -> &[CountyKey] {
        &self.counties
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    pub fn feature_by_name(&self, name: &str) -> Option<&FeatureSpec> {
        self.features.iter().find(|f| f.name == name)
    }

    pub fn row_of(&self, fips: &str) -> Option<usize> {
        self.fips_index.get(fips).copied()
    }

    pub fn value(&self, row: usize, feature: usize) -> Option<f64> {
        let v = self.values[row * self.features.len() + feature];
        (!v.is_nan()).then_some(v)
    }

    pub fn target(&self, row: usize) -> Option<f64> {
        let v = self.target[row];
        (!v.is_nan()).then_some(v)
    }

    /// Column as `(row, value)` pairs over non-missing cells.
    pub fn column(&self, feature: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let m = self.features.len();
        (0..self.counties.len()).filter_map(move |i| {
            let v = self.values[i * m + feature];
            (!v.is_nan()).then_some((i, v))
        })
    }

    /// Mean over non-missing target entries.
    pub fn global_target_mean(&self) -> f64 {
        let (sum, n) = self
            .target
            .iter()
            .filter(|v| !v.is_nan())
            .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        sum / n as f64
    }

    /// True when the non-missing target values are exactly {0, 1}.
    pub fn target_is_binary(&self) -> bool {
        detect_kind(self.target.iter().copied()) == FeatureKind::Binary
    }

    /// Fewer than two distinct non-missing values. Constant features are
    /// never mined.
    pub fn is_constant(&self, feature: usize) -> bool {
        let mut it = self.column(feature).map(|(_, v)| v);
        match it.next() {
            None => true,
            Some(first) => it.all(|v| v == first),
        }
    }

    pub fn set_units(&mut self, units: &BTreeMap<String, String>) {
        for f in &mut self.features {
            if let Some(u) = units.get(&f.name) {
                f.units = u.clone();
            }
        }
    }

    /// Returns a copy whose target column is replaced.
    pub fn with_target(&self, target: Vec<Option<f64>>) -> Result<Self, DatasetError> {
        if target.len() != self.n_counties() {
            return Err(DatasetError::Shape("target length".into()));
        }
        if target.iter().all(Option::is_none) {
            return Err(DatasetError::TargetAllMissing(self.target_name.clone()));
        }
        let mut out = self.clone();
        out.target = target.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect();
        Ok(out)
    }

    /// Canonical CSV: `fips,name,state,<features...>,<target>`, missing cells
    /// empty, floats in shortest round-trip form.
    pub fn to_canonical_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["fips", "name", "state"];
        header.extend(self.features.iter().map(|f| f.name.as_str()));
        header.push(&self.target_name);
        w.write_record(&header).expect("in-memory write");
        let fmt = |v: f64| if v.is_nan() { String::new() } else { format!("{v}") };
        let m = self.features.len();
        for (i, c) in self.counties.iter().enumerate() {
            let mut rec = vec![c.fips.clone(), c.name.clone(), c.state.clone()];
            rec.extend(self.values[i * m..(i + 1) * m].iter().map(|&v| fmt(v)));
            rec.push(fmt(self.target[i]));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
    }

    /// Schema matching [`DataMatrix::to_canonical_csv`].
    pub fn canonical_schema(&self) -> SchemaConfig {
        SchemaConfig::new(self.target_name.clone())
    }

    /// Hex SHA-256 of the canonical CSV.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_canonical_csv().as_bytes()))
    }
}

/// Reads a matrix CSV. Every column except fips/name/state/target and the
/// excluded ones becomes a feature.
pub fn load_matrix(path: &Path, schema: &SchemaConfig) -> Result<DataMatrix, DatasetError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    read_matrix(file, schema)
}

pub fn read_matrix<R: std::io::Read>(reader: R, schema: &SchemaConfig) -> Result<DataMatrix, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let fips_col = find(&schema.fips_column).ok_or_else(|| DatasetError::MissingColumn(schema.fips_column.clone()))?;
    let target_col =
        find(&schema.target_column).ok_or_else(|| DatasetError::MissingColumn(schema.target_column.clone()))?;
    let name_col = find(&schema.name_column);
    let state_col = find(&schema.state_column);
    let special: BTreeSet<usize> = [Some(fips_col), Some(target_col), name_col, state_col]
        .into_iter()
        .flatten()
        .collect();
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|j| !special.contains(j) && !schema.exclude_columns.contains(&headers[*j]))
        .collect();

    let mut counties = Vec::new();
    let mut values = Vec::new();
    let mut target = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let raw_fips = rec.get(fips_col).unwrap_or("");
        let fips = normalize_fips(raw_fips).ok_or_else(|| DatasetError::InvalidFips {
            row,
            value: raw_fips.to_string(),
        })?;
        let text = |c: Option<usize>| c.and_then(|c| rec.get(c)).unwrap_or("").trim().to_string();
        counties.push(CountyKey {
            fips,
            name: text(name_col),
            state: text(state_col),
        });
        let cell = |j: usize| {
            let raw = rec.get(j).unwrap_or("");
            parse_cell(raw).map_err(|_| DatasetError::NonNumeric {
                row,
                column: headers[j].clone(),
                value: raw.to_string(),
            })
        };
        for &j in &feature_cols {
            values.push(cell(j)?);
        }
        target.push(cell(target_col)?);
    }
    if counties.is_empty() {
        return Err(DatasetError::Empty);
    }
    let names = feature_cols.iter().map(|&j| headers[j].clone()).collect();
    let mut matrix = DataMatrix::new(counties, names, values, target, schema.target_column.clone())?;
    matrix.set_units(&schema.units);
    Ok(matrix)
}

/// Per-county cumulative target values on a shared date axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetTimeSeries {
    pub dates: Vec<NaiveDate>,
    pub series: BTreeMap<String, Vec<f64>>,
}

/// Result of [`load_timeseries`]: the series plus per-county clamp counts.
#[derive(Debug, Clone)]
pub struct TimeSeriesLoad {
    pub series: TargetTimeSeries,
    /// Number of entries raised to the running maximum, per fips. Counties
    /// without clamps are absent.
    pub clamps: BTreeMap<String, usize>,
}

impl TargetTimeSeries {
    /// Builds a series, clamping each county to its running maximum.
    /// Missing cells carry the previous value forward (0 before the first).
    pub fn from_raw(dates: Vec<NaiveDate>, raw: BTreeMap<String, Vec<Option<f64>>>) -> TimeSeriesLoad {
        let mut clamps = BTreeMap::new();
        let series = raw
            .into_iter()
            .map(|(fips, vals)| {
                let mut running = f64::NEG_INFINITY;
                let mut n_clamped = 0;
                let out: Vec<f64> = vals
                    .into_iter()
                    .map(|v| match v {
                        Some(v) if v < running => {
                            n_clamped += 1;
                            running
                        }
                        Some(v) => {
                            running = v;
                            v
                        }
                        None => running.max(0.0),
                    })
                    .collect();
                if n_clamped > 0 {
                    clamps.insert(fips.clone(), n_clamped);
                }
                (fips, out)
            })
            .collect();
        TimeSeriesLoad {
            series: TargetTimeSeries { dates, series },
            clamps,
        }
    }

    pub fn get(&self, fips: &str) -> Option<&[f64]> {
        self.series.get(fips).map(Vec::as_slice)
    }

    /// Index of `date` on the axis, or of the nearest earlier date.
    pub fn snap(&self, date: NaiveDate) -> Option<usize> {
        match self.dates.binary_search(&date) {
            Ok(i) => Some(i),
            Err(0) => None,
            Err(i) => Some(i - 1),
        }
    }

    /// Series fips that the matrix does not know. They are kept (geometry
    /// may still shade them) but flagged.
    pub fn unknown_fips(&self, matrix: &DataMatrix) -> Vec<String> {
        self.series
            .keys()
            .filter(|f| matrix.row_of(f).is_none())
            .cloned()
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["fips".to_string()];
        header.extend(self.dates.iter().map(|d| d.format("%Y-%m-%d").to_string()));
        w.write_record(&header).expect("in-memory write");
        for (fips, vals) in &self.series {
            let mut rec = vec![fips.clone()];
            rec.extend(vals.iter().map(|v| format!("{v}")));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
    }
}

/// Reads a wide time-series CSV: `fips,YYYY-MM-DD,YYYY-MM-DD,...`.
pub fn load_timeseries(path: &Path) -> Result<TimeSeriesLoad, DatasetError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    read_timeseries(file)
}

pub fn read_timeseries<R: std::io::Read>(reader: R) -> Result<TimeSeriesLoad, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if headers.len() < 2 {
        return Err(DatasetError::NoDateColumns);
    }
    let dates = headers[1..]
        .iter()
        .map(|h| NaiveDate::parse_from_str(h, "%Y-%m-%d").map_err(|_| DatasetError::BadDate(h.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    if dates.windows(2).any(|w| w[0] >= w[1]) {
        return Err(DatasetError::BadDate("date columns must be strictly increasing".into()));
    }
    let mut raw = BTreeMap::new();
    let mut dups = BTreeSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let raw_fips = rec.get(0).unwrap_or("");
        let fips = normalize_fips(raw_fips).ok_or_else(|| DatasetError::InvalidFips {
            row,
            value: raw_fips.to_string(),
        })?;
        let vals = (1..headers.len())
            .map(|j| {
                let cell = rec.get(j).unwrap_or("");
                parse_cell(cell).map_err(|_| DatasetError::NonNumeric {
                    row,
                    column: headers[j].clone(),
                    value: cell.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        if raw.insert(fips.clone(), vals).is_some() {
            dups.insert(fips);
        }
    }
    if !dups.is_empty() {
        return Err(DatasetError::DuplicateFips(dups.into_iter().collect()));
    }
    Ok(TargetTimeSeries::from_raw(dates, raw))
}

/// Feature ranges across the country and per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalStats {
    pub feature_min: Vec<Option<f64>>,
    pub feature_max: Vec<Option<f64>>,
    pub feature_mean: Vec<Option<f64>>,
    pub state_ranges: BTreeMap<String, Vec<Option<(f64, f64)>>>,
    pub global_target_mean: f64,
}

impl GlobalStats {
    pub fn us_range(&self, feature: usize) -> Option<(f64, f64)> {
        Some((self.feature_min[feature]?, self.feature_max[feature]?))
    }

    pub fn state_range(&self, state: &str, feature: usize) -> Option<(f64, f64)> {
        self.state_ranges.get(state)?.get(feature).copied().flatten()
    }
}

fn widen(slot: &mut Option<(f64, f64)>, v: f64) {
    *slot = Some(match *slot {
        None => (v, v),
        Some((lo, hi)) => (lo.min(v), hi.max(v)),
    });
}

pub fn global_stats(matrix: &DataMatrix) -> GlobalStats {
    let m = matrix.n_features();
    let mut us: Vec<Option<(f64, f64)>> = vec![None; m];
    let mut sums = vec![(0.0, 0usize); m];
    let mut state_ranges: BTreeMap<String, Vec<Option<(f64, f64)>>> = BTreeMap::new();
    for (i, county) in matrix.counties().iter().enumerate() {
        let states = state_ranges
            .entry(county.state.clone())
            .or_insert_with(|| vec![None; m]);
        for j in 0..m {
            if let Some(v) = matrix.value(i, j) {
                widen(&mut us[j], v);
                widen(&mut states[j], v);
                sums[j].0 += v;
                sums[j].1 += 1;
            }
        }
    }
    GlobalStats {
        feature_min: us.iter().map(|r| r.map(|r| r.0)).collect(),
        feature_max: us.iter().map(|r| r.map(|r| r.1)).collect(),
        feature_mean: sums.iter().map(|&(s, n)| (n > 0).then(|| s / n as f64)).collect(),
        state_ranges,
        global_target_mean: matrix.global_target_mean(),
    }
}
