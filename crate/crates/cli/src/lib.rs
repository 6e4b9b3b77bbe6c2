//! The `cabcompare` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 I/O error.
//! Data goes to stdout (JSON) or the named output files; logs go to stderr.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use cabcompare_core::analytics::{AnalyticsError, HistogramSpec};
use cabcompare_core::binfmt::FormatError;
use cabcompare_core::ingest::{self, ColumnMapping, IngestError};
use cabcompare_core::mesh_index::{IndexError, DEFAULT_MAX_RING};
use cabcompare_core::{
    compare, BoundingBox, Cents, FareError, GeoPoint, MeshIndex, MeshSpec, ProviderConfig, QueryError,
    Sampling, StatsConfig,
};
use cabcompare_service::{ServiceConfig, ServiceError};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "cabcompare", version, about = "Yellow cab vs ride-hailing fare comparison")]
pub struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a trip CSV (optionally joined with a fare CSV) into a records file.
    Ingest(IngestArgs),
    /// Build the mesh index from a records file.
    BuildIndex(BuildIndexArgs),
    /// Compare yellow and ride-hailing prices for one trip.
    #[command(allow_negative_numbers = true)]
    Query(QueryArgs),
    /// Batch statistics over the indexed corpus.
    Stats(StatsArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Fare CSV to join on (medallion, hack_license, pickup_datetime).
    #[arg(long)]
    pub fares: Option<PathBuf>,
    /// Column mapping, JSON or TOML.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// south,west,north,east in degrees (default: New York City).
    #[arg(long, allow_hyphen_values = true)]
    pub bbox: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildIndexArgs {
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long, default_value_t = 100.0)]
    pub cell_size: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub olat: f64,
    #[arg(long)]
    pub olon: f64,
    #[arg(long)]
    pub dlat: f64,
    #[arg(long)]
    pub dlon: f64,
    /// Provider TOML (default: built-in rate-card emulator).
    #[arg(long)]
    pub provider_config: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MAX_RING)]
    pub max_ring: u32,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub provider_config: Option<PathBuf>,
    /// Fraction of trips to sample, in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    pub sample: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Yellow-price bin width for the median curve, USD.
    #[arg(long, default_value_t = 1.0)]
    pub bin_width: f64,
    /// Bins with fewer pairs get no median.
    #[arg(long, default_value_t = 1)]
    pub min_support: u64,
    #[arg(long, default_value_t = 1_000.0)]
    pub raster_cell_size: f64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<IndexError> for CliError {
    fn from(e: IndexError) -> Self {
        match e {
            IndexError::Format(f) => f.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match &e {
            IngestError::Io { .. } => CliError::Io(e.to_string()),
            IngestError::Csv { source, .. } if source.is_io_error() => CliError::Io(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<AnalyticsError> for CliError {
    fn from(e: AnalyticsError) -> Self {
        match e {
            AnalyticsError::Io(e) => CliError::Io(e.to_string()),
            AnalyticsError::InvalidSample(_) | AnalyticsError::InvalidBinWidth => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Io(e) => CliError::Io(e.to_string()),
            ServiceError::Index(e) => e.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

fn parse_bbox(s: &str) -> Result<BoundingBox, CliError> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("--bbox {s:?}: expected south,west,north,east")))?;
    let [s_, w, n, e] = v[..] else {
        return Err(CliError::Usage(format!("--bbox {s:?}: expected four numbers")));
    };
    BoundingBox::new(GeoPoint { lat: s_, lon: w }, GeoPoint { lat: n, lon: e })
        .map_err(|e| CliError::Usage(format!("--bbox: {e}")))
}

fn load_provider(path: Option<&Path>) -> Result<Box<dyn cabcompare_core::PricingProvider>, CliError> {
    let config = match path {
        Some(p) if !p.is_file() => return Err(io_err(p, "no such file")),
        Some(p) => ProviderConfig::from_toml_file(p).map_err(|e| CliError::Data(e.to_string()))?,
        None => ProviderConfig::default(),
    };
    config.build().map_err(|e| CliError::Data(e.to_string()))
}

/// `SOURCE_DATE_EPOCH` when set, so rebuilt indexes are byte-identical.
fn build_time() -> Result<i64, CliError> {
    match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(v) => v.trim().parse().map_err(|_| CliError::Usage(format!("SOURCE_DATE_EPOCH={v:?} is not an integer"))),
        Err(_) => Ok(SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs() as i64).unwrap_or(0)),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(out).map_err(|e| CliError::Io(e.to_string()))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(|f| BufReader::with_capacity(1 << 20, f)).map_err(|e| io_err(path, e))
}

fn cmd_ingest(a: &IngestArgs) -> Result<(), CliError> {
    let mapping = match &a.schema {
        Some(p) if !p.is_file() => return Err(io_err(p, "no such file")),
        Some(p) => ColumnMapping::from_file(p)?,
        None => ColumnMapping::default(),
    };
    let bbox = a.bbox.as_deref().map(parse_bbox).transpose()?.unwrap_or_else(BoundingBox::nyc);
    let (records, report) = match &a.fares {
        Some(f) => ingest::join_fare(open(&a.input)?, open(f)?, &mapping, bbox)?,
        None => ingest::ingest_reader(open(&a.input)?, &mapping, bbox)?,
    };
    tracing::info!(read = report.rows_read, kept = report.rows_kept, "ingested");
    ingest::write_records(&a.out, &bbox, &records)?;
    print_json(&report)
}

#[derive(Serialize)]
struct BuildSummary {
    trips: usize,
    cells: usize,
    cols: u32,
    rows: u32,
    cell_size_m: f64,
    built_at: i64,
}

fn cmd_build_index(a: &BuildIndexArgs) -> Result<(), CliError> {
    let (bbox, records) = ingest::read_records(&a.records)?;
    let spec = MeshSpec::new(bbox, a.cell_size).map_err(|e| CliError::Usage(format!("--cell-size: {e}")))?;
    let index = MeshIndex::build(records, spec, build_time()?)?;
    index.save(&a.out)?;
    tracing::info!(trips = index.len(), cells = index.directory().len(), "index written");
    print_json(&BuildSummary {
        trips: index.len(),
        cells: index.directory().len(),
        cols: spec.cols(),
        rows: spec.rows(),
        cell_size_m: spec.cell_size,
        built_at: index.built_at(),
    })
}

fn cmd_query(a: &QueryArgs) -> Result<(), CliError> {
    let index = MeshIndex::load(&a.index)?;
    let provider = load_provider(a.provider_config.as_deref())?;
    let point = |lat, lon, which| GeoPoint::new(lat, lon).map_err(|e| CliError::Usage(format!("{which}: {e}")));
    let origin = point(a.olat, a.olon, "origin")?;
    let dest = point(a.dlat, a.dlon, "destination")?;
    let result = compare(&index, provider.as_ref(), &origin, &dest, a.max_ring).map_err(|e| match e {
        FareError::Query(QueryError::OutOfBounds(g)) => CliError::Usage(g.to_string()),
        FareError::Query(QueryError::InvalidRing) => CliError::Usage("--max-ring must be positive".into()),
        other => CliError::Data(other.to_string()),
    })?;
    print_json(&result)
}

fn cmd_stats(a: &StatsArgs) -> Result<(), CliError> {
    let sampling = Sampling::new(a.sample, a.seed)?;
    let curve_bin_width = Cents::from_dollars(a.bin_width)
        .filter(|c| c.is_positive())
        .ok_or_else(|| CliError::Usage("--bin-width must be at least one cent".into()))?;
    let index = MeshIndex::load(&a.index)?;
    let provider = load_provider(a.provider_config.as_deref())?;
    let config = StatsConfig {
        sampling,
        price_bins: HistogramSpec::prices(),
        distance_bins: HistogramSpec::distances(),
        curve_bin_width,
        curve_min_support: a.min_support,
        raster_cell_m: a.raster_cell_size,
    };
    let bundle = cabcompare_core::run_stats(index.trips(), index.spec(), provider.as_ref(), &config)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| io_err(&a.out_dir, e))?;
    bundle.write_outputs(&a.out_dir)?;
    tracing::info!(paired = bundle.run.paired, failed = bundle.run.provider_failed, "stats written");
    print_json(&bundle.summary())
}

fn cmd_serve(a: &ServeArgs, threads: Option<usize>) -> Result<(), CliError> {
    if !a.config.is_file() {
        return Err(io_err(&a.config, "no such file"));
    }
    let config = ServiceConfig::from_file(&a.config)?;
    let mut rt = tokio::runtime::Builder::new_multi_thread();
    if let Some(n) = threads {
        rt.worker_threads(n);
    }
    let rt = rt.enable_all().build().map_err(|e| CliError::Io(e.to_string()))?;
    rt.block_on(cabcompare_service::serve(config))?;
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::BuildIndex(a) => cmd_build_index(a),
        Command::Query(a) => cmd_query(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Serve(a) => cmd_serve(a, cli.threads),
    }
}

/// Parses `args` and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
