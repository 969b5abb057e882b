//! `riskmap`: mine, serve, backtest and inspect county risk patterns.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage error.

mod inspect;

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::Context as _;
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use riskmap_core::dataset::{load_matrix, load_timeseries, parse_key_values, DataMatrix, SchemaConfig};
use riskmap_core::evaluator::{evaluate_growth, DEFAULT_THRESHOLD};
use riskmap_core::miner::{mine_with, MiningConfig, MiningDirection};
use riskmap_core::patternstore::{self, PatternStore};
use riskmap_core::synth::{growth_series, planted, shuffled_target, PlantedConfig};
use riskmap_core::{fixture, Execution};
use riskmap_server::{router, AppState, ServerOptions};

#[derive(Debug, Parser)]
#[command(
    name = "riskmap",
    version,
    about = "Significant hypercube risk patterns over county data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Mine significant patterns and write a pattern store.
    Mine(MineArgs),
    /// Serve the dashboard API.
    Serve(ServeArgs),
    /// Backtest member growth against the national average.
    Evaluate(EvaluateArgs),
    /// Print a pattern or a county the way the dashboard panels show them.
    Inspect(InspectArgs),
    /// Write a synthetic dataset with one planted pattern.
    Synth(SynthArgs),
    /// Write the small hand-built demo dataset and store.
    Fixture(FixtureArgs),
}

/// Matrix location plus how to read it.
#[derive(Debug, Args)]
struct MatrixArgs {
    /// County x feature CSV.
    #[arg(long)]
    matrix: PathBuf,
    /// Schema file (key = value).
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Config file: schema keys plus mining keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Target column; overrides schema and config files.
    #[arg(long)]
    target: Option<String>,
}

#[derive(Debug, Args)]
struct MineArgs {
    #[command(flatten)]
    input: MatrixArgs,
    /// Where to write the pattern store.
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long)]
    min_support: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    bins_per_feature: Option<usize>,
    #[arg(long)]
    max_merge_run: Option<usize>,
    /// high, low or both.
    #[arg(long)]
    direction: Option<MiningDirection>,
    /// Run every stage on one thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[command(flatten)]
    input: MatrixArgs,
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    timeseries: Option<PathBuf>,
    #[arg(long)]
    geojson: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// 0 picks a free port.
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Do not send cross-origin headers.
    #[arg(long)]
    no_cors: bool,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    timeseries: PathBuf,
    #[arg(long)]
    t0: NaiveDate,
    #[arg(long)]
    t1: NaiveDate,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
    /// Also write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[command(flatten)]
    input: MatrixArgs,
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    timeseries: Option<PathBuf>,
    #[arg(long, conflicts_with = "county", required_unless_present = "county")]
    pattern: Option<String>,
    #[arg(long)]
    county: Option<String>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 3000)]
    counties: usize,
    #[arg(long, default_value_t = 20)]
    features: usize,
    /// Target shift inside the planted cell, in standard deviations.
    #[arg(long, default_value_t = 2.0)]
    shift: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Permute the target with this seed, destroying the planted signal.
    #[arg(long)]
    shuffle: Option<u64>,
    /// Growth multiple granted to planted members in the time series.
    #[arg(long, default_value_t = 2.5)]
    growth_ratio: f64,
    #[arg(long, default_value_t = 8)]
    dates: usize,
}

#[derive(Debug, Args)]
struct FixtureArgs {
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Domain(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Domain(e)
    }
}

type CmdResult = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn require_file(path: &Path, what: &str) -> CmdResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} not found: {}", path.display())))
    }
}

/// Key/value pairs from `--config`, empty without one.
fn config_pairs(args: &MatrixArgs) -> Result<BTreeMap<String, String>, Failure> {
    let Some(path) = &args.config else {
        return Ok(BTreeMap::new());
    };
    require_file(path, "config file")?;
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    parse_key_values(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Schema precedence: `--target` over `--schema` over `--config`.
fn schema(args: &MatrixArgs, pairs: &BTreeMap<String, String>) -> Result<SchemaConfig, Failure> {
    let mut schema = if let Some(path) = &args.schema {
        require_file(path, "schema file")?;
        SchemaConfig::from_file(path).map_err(|e| usage(e.to_string()))?
    } else if pairs.contains_key("target_column") {
        SchemaConfig::from_pairs(pairs).map_err(|e| usage(e.to_string()))?
    } else if let Some(t) = &args.target {
        SchemaConfig::new(t.clone())
    } else {
        return Err(usage(
            "no target column: pass --target, --schema or a --config with target_column",
        ));
    };
    if let Some(t) = &args.target {
        schema.target_column = t.clone();
    }
    Ok(schema)
}

fn load_input(args: &MatrixArgs) -> Result<(DataMatrix, BTreeMap<String, String>), Failure> {
    require_file(&args.matrix, "matrix")?;
    let pairs = config_pairs(args)?;
    let schema = schema(args, &pairs)?;
    let matrix = load_matrix(&args.matrix, &schema).with_context(|| format!("loading {}", args.matrix.display()))?;
    Ok((matrix, pairs))
}

fn cmd_mine(a: MineArgs) -> CmdResult {
    let (matrix, pairs) = load_input(&a.input)?;
    let mut config = MiningConfig::default();
    config.apply_pairs(&pairs).map_err(|e| usage(e.to_string()))?;
    if let Some(v) = a.min_support {
        config.min_support = v;
    }
    if let Some(v) = a.alpha {
        config.alpha = v;
    }
    if let Some(v) = a.max_depth {
        config.max_depth = v;
    }
    if let Some(v) = a.bins_per_feature {
        config.bins_per_feature = v;
    }
    if let Some(v) = a.max_merge_run {
        config.max_merge_run = v;
    }
    if let Some(v) = a.direction {
        config.direction = v;
    }
    config.validate().map_err(|e| usage(e.to_string()))?;
    let exec = if a.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let start = Instant::now();
    let set = mine_with(&matrix, &config, exec).context("mining failed")?;
    let elapsed = start.elapsed();
    patternstore::save(&set, &a.out).context("writing pattern store")?;

    println!("{} patterns", set.patterns.len());
    for (depth, n) in set.depth_counts() {
        println!("  depth {depth}: {n}");
    }
    if !set.patterns.is_empty() {
        let means = set.patterns.iter().map(|p| p.mean_target);
        let lo = means.clone().fold(f64::INFINITY, f64::min);
        let hi = means.fold(f64::NEG_INFINITY, f64::max);
        println!(
            "mean {}: min {lo:.4}, max {hi:.4} (all counties {:.4})",
            matrix.target_name(),
            set.global_target_mean
        );
    }
    println!("runtime {:.2} s", elapsed.as_secs_f64());
    println!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> CmdResult {
    require_file(&a.input.matrix, "matrix")?;
    require_file(&a.store, "store")?;
    for (p, what) in [(&a.timeseries, "time series"), (&a.geojson, "geometry file")] {
        if let Some(p) = p {
            require_file(p, what)?;
        }
    }
    let (matrix, _) = load_input(&a.input)?;
    let set = patternstore::load(&a.store).with_context(|| format!("loading {}", a.store.display()))?;
    let series = a
        .timeseries
        .as_deref()
        .map(load_timeseries)
        .transpose()
        .context("loading time series")?
        .map(|l| l.series);
    let geo = a
        .geojson
        .as_deref()
        .map(std::fs::read)
        .transpose()
        .context("reading geometry file")?;
    let state = Arc::new(AppState::new(matrix, set, series, geo));
    let app = router(state, ServerOptions { cors: !a.no_cors });
    let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port))
            .await
            .with_context(|| format!("cannot listen on {}:{}", a.host, a.port))?;
        let addr = listener.local_addr().context("reading bound address")?;
        println!("listening on http://{addr}");
        let _ = std::io::stdout().flush();
        riskmap_server::serve(listener, app, riskmap_server::shutdown_signal())
            .await
            .context("server error")
    })?;
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> CmdResult {
    if a.t0 >= a.t1 {
        return Err(usage(format!("--t0 ({}) must be before --t1 ({})", a.t0, a.t1)));
    }
    require_file(&a.store, "store")?;
    require_file(&a.timeseries, "time series")?;
    let set = patternstore::load(&a.store).with_context(|| format!("loading {}", a.store.display()))?;
    let ts = load_timeseries(&a.timeseries).context("loading time series")?.series;
    let report = evaluate_growth(&set, &ts, a.t0, a.t1, a.threshold).map_err(anyhow::Error::from)?;
    if let Some(out) = &a.out {
        std::fs::write(out, report.to_json()).with_context(|| format!("writing {}", out.display()))?;
    }
    if a.json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}

fn cmd_inspect(a: InspectArgs) -> CmdResult {
    require_file(&a.store, "store")?;
    let (matrix, _) = load_input(&a.input)?;
    let set = patternstore::load(&a.store).with_context(|| format!("loading {}", a.store.display()))?;
    let series = match &a.timeseries {
        Some(p) => {
            require_file(p, "time series")?;
            Some(load_timeseries(p).context("loading time series")?.series)
        }
        None => None,
    };
    let store = PatternStore::new(set);
    let text = match (&a.pattern, &a.county) {
        (Some(id), _) => inspect::pattern(&store, &matrix, id)?,
        (None, Some(fips)) => inspect::county(&store, &matrix, series.as_ref(), fips)?,
        (None, None) => return Err(usage("pass --pattern or --county")),
    };
    print!("{text}");
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> CmdResult {
    let cfg = PlantedConfig {
        n_counties: a.counties,
        n_features: a.features,
        shift_sigma: a.shift,
        seed: a.seed,
        ..PlantedConfig::default()
    };
    if cfg.n_features < cfg.planted_features.len() {
        return Err(usage(format!("need at least {} features", cfg.planted_features.len())));
    }
    let data = planted(&cfg);
    let matrix = match a.shuffle {
        Some(seed) => shuffled_target(&data.matrix, seed),
        None => data.matrix.clone(),
    };
    let ts = growth_series(&matrix, &data.planted_members, a.growth_ratio, a.dates.max(2), a.seed);
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let write = |name: &str, text: String| -> anyhow::Result<()> {
        let p = a.out.join(name);
        std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
    };
    write("matrix.csv", matrix.to_canonical_csv())?;
    write("schema.conf", matrix.canonical_schema().to_text())?;
    write("timeseries.csv", ts.to_csv())?;
    write("planted.txt", data.planted_members.join("\n") + "\n")?;
    println!(
        "wrote {} counties, {} features, {} planted members to {}",
        matrix.n_counties(),
        matrix.n_features(),
        data.planted_members.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_fixture(a: FixtureArgs) -> CmdResult {
    let paths = fixture::write_all(&a.out).context("writing fixture")?;
    for p in [
        &paths.matrix,
        &paths.schema,
        &paths.timeseries,
        &paths.geojson,
        &paths.store,
    ] {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Mine(a) => cmd_mine(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Fixture(a) => cmd_fixture(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Domain(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
