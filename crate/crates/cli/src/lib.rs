//! Batch commands behind the `prismatic` binary. Each command is also
//! callable as a function so pipelines can be driven in-process.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use prismatic_core::corrnet::{self, CorrError, YearlyCorrelationCache};
use prismatic_core::ingest::{Basis, IngestError, InstrumentId};
use prismatic_core::knowledge::MultiLayerNetwork;
use prismatic_core::mvclust::{self, GmcError, GmcParams, GmcResult};
use prismatic_core::prism::{self, PrismError, DEFAULT_MIN_WINDOW};
use prismatic_core::store::{self, Store, StoreConfig, StoreError, GMC_FILE};
use prismatic_core::synth::{self, SynthConfig};
use prismatic_service::AppState;

#[derive(Debug, Parser)]
#[command(name = "prismatic", version, about = "Stock cluster analysis toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize raw prices and metadata into a store directory.
    Ingest(IngestArgs),
    /// Build yearly correlation caches.
    Corr(CorrArgs),
    /// Run multi-view knowledge clustering over all profiled companies.
    Gmc(GmcArgs),
    /// Export a correlation prism for a pair of instruments.
    Prism(PrismArgs),
    /// Generate a synthetic market with planted communities.
    Synth(SynthArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub prices: PathBuf,
    #[arg(long)]
    pub meta: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Ticker of the market index series.
    #[arg(long)]
    pub benchmark: Option<String>,
    #[arg(long, value_enum, default_value = "returns")]
    pub basis: BasisArg,
    /// Minimum overlapping days for a correlation to count.
    #[arg(long, default_value_t = 30)]
    pub min_overlap: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BasisArg {
    Returns,
    Levels,
}

#[derive(Debug, Args)]
pub struct CorrArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, conflicts_with = "all")]
    pub year: Option<i32>,
    #[arg(long)]
    pub all: bool,
}

#[derive(Debug, Args)]
pub struct GmcArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub clusters: usize,
    #[arg(long, default_value_t = mvclust::DEFAULT_K_NEIGHBORS)]
    pub k: usize,
    #[arg(long, default_value_t = mvclust::DEFAULT_MAX_ITER)]
    pub max_iter: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PrismFormat {
    Csv,
    Bin,
}

#[derive(Debug, Args)]
pub struct PrismArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub a: String,
    #[arg(long)]
    pub b: String,
    #[arg(long)]
    pub from: NaiveDate,
    #[arg(long)]
    pub to: NaiveDate,
    #[arg(long, default_value_t = DEFAULT_MIN_WINDOW)]
    pub min_window: usize,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: PrismFormat,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 300)]
    pub stocks: usize,
    #[arg(long, default_value_t = 2)]
    pub years: usize,
    #[arg(long, default_value_t = 10)]
    pub communities: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 2010)]
    pub start_year: i32,
    /// Loading of each stock on its community factor.
    #[arg(long, default_value_t = 0.7)]
    pub loading: f64,
    /// Probability that a knowledge item agrees with the planted community.
    #[arg(long, default_value_t = 0.8)]
    pub agreement: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "PRISMATIC_DATA")]
    pub data: PathBuf,
    #[arg(long, env = "PRISMATIC_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, env = "PRISMATIC_BENCHMARK")]
    pub benchmark: Option<String>,
}

#[derive(Debug)]
pub enum CliError {
    Ingest(IngestError),
    Store(StoreError),
    Corr(CorrError),
    Gmc(GmcError),
    Prism(PrismError),
    Usage(String),
    Io(PathBuf, std::io::Error),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Ingest(_) | CliError::Store(StoreError::Ingest(_)) => "ingest",
            CliError::Store(StoreError::MissingBenchmark(_)) => "missing_benchmark",
            CliError::Store(_) => "store",
            CliError::Corr(_) => "corr",
            CliError::Gmc(_) => "gmc",
            CliError::Prism(_) => "prism",
            CliError::Usage(_) => "usage",
            CliError::Io(..) => "io",
        }
    }

    /// The one-line machine-readable form written to standard error.
    pub fn to_json(&self) -> Value {
        let mut v = json!({"error": self.code(), "message": self.to_string()});
        let line = match self {
            CliError::Ingest(e) | CliError::Store(StoreError::Ingest(e)) => match e {
                IngestError::MalformedRow { line, .. }
                | IngestError::DuplicateDate { line, .. } => Some(*line),
                _ => None,
            },
            _ => None,
        };
        if let Some(line) = line {
            v["line"] = json!(line);
        }
        v
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Ingest(e) => e.fmt(f),
            CliError::Store(e) => e.fmt(f),
            CliError::Corr(e) => e.fmt(f),
            CliError::Gmc(e) => e.fmt(f),
            CliError::Prism(e) => e.fmt(f),
            CliError::Usage(m) => f.write_str(m),
            CliError::Io(p, e) => write!(f, "{}: {e}", p.display()),
        }
    }
}

impl std::error::Error for CliError {}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Ingest(e)
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        CliError::Store(e)
    }
}

impl From<CorrError> for CliError {
    fn from(e: CorrError) -> Self {
        CliError::Corr(e)
    }
}

impl From<GmcError> for CliError {
    fn from(e: GmcError) -> Self {
        CliError::Gmc(e)
    }
}

impl From<PrismError> for CliError {
    fn from(e: PrismError) -> Self {
        CliError::Prism(e)
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(path.to_path_buf(), e)
}

fn ticker(s: &str) -> Result<InstrumentId, CliError> {
    InstrumentId::new(s).map_err(|e| CliError::Usage(e.to_string()))
}

/// Run a parsed command, writing its report to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let report = match cli.command {
        Command::Ingest(a) => ingest(&a)?,
        Command::Corr(a) => corr(&a)?,
        Command::Gmc(a) => gmc(&a)?,
        Command::Prism(a) => return prism_export(&a, out),
        Command::Synth(a) => synth_market(&a)?,
        Command::Serve(a) => return serve(&a),
    };
    writeln!(out, "{report}").map_err(io(Path::new("<stdout>")))
}

pub fn ingest(a: &IngestArgs) -> Result<Value, CliError> {
    let config = StoreConfig {
        basis: match a.basis {
            BasisArg::Returns => Basis::Returns,
            BasisArg::Levels => Basis::Levels,
        },
        benchmark: a.benchmark.as_deref().map(ticker).transpose()?,
        min_overlap: a.min_overlap,
    };
    let (store, warnings) = Store::ingest(&a.prices, &a.meta, config)?;
    store.save(&a.out)?;
    Ok(json!({
        "instruments": store.series.len(),
        "profiles": store.profiles.len(),
        "years": store.years(),
        "warnings": warnings.iter().map(|w| w.to_string()).collect::<Vec<_>>(),
    }))
}

/// Build and write the caches for `years` (all store years when `None`).
pub fn build_caches(dir: &Path, years: Option<Vec<i32>>) -> Result<Vec<(i32, usize)>, CliError> {
    let store = Store::load(dir)?;
    let years = years.unwrap_or_else(|| store.years().into_iter().collect());
    fs::create_dir_all(dir.join(store::CACHE_DIR)).map_err(io(dir))?;
    let mut done = Vec::new();
    for year in years {
        let cache = corrnet::build_yearly_cache(&store, year)?;
        let path = store::cache_path(dir, year);
        let file = fs::File::create(&path).map_err(io(&path))?;
        cache.write_to(BufWriter::new(file)).map_err(io(&path))?;
        done.push((year, cache.len()));
    }
    Ok(done)
}

pub fn corr(a: &CorrArgs) -> Result<Value, CliError> {
    let years = match (a.year, a.all) {
        (Some(y), _) => Some(vec![y]),
        (None, true) => None,
        (None, false) => return Err(CliError::Usage("pass --year Y or --all".into())),
    };
    let done = build_caches(&a.data, years)?;
    Ok(json!(done
        .iter()
        .map(|(year, n)| json!({"year": year, "instruments": n}))
        .collect::<Vec<_>>()))
}

pub fn load_cache(dir: &Path, year: i32) -> Result<YearlyCorrelationCache, CliError> {
    let path = store::cache_path(dir, year);
    let file = fs::File::open(&path).map_err(io(&path))?;
    Ok(YearlyCorrelationCache::read_from(
        std::io::BufReader::new(file),
        year,
    )?)
}

/// Cluster every profiled company and store the result as `gmc.json`.
pub fn run_store_gmc(dir: &Path, params: &GmcParams) -> Result<GmcResult, CliError> {
    let store = Store::load(dir)?;
    let network = MultiLayerNetwork::build(&store.profiles);
    let companies: Vec<InstrumentId> = network.companies().cloned().collect();
    let views = mvclust::views_from_network(&network, &companies)?;
    let result = mvclust::run_gmc(&companies, &views, params)?;
    let path = dir.join(GMC_FILE);
    let file = fs::File::create(&path).map_err(io(&path))?;
    serde_json::to_writer(BufWriter::new(file), &result)
        .map_err(|e| CliError::Io(path.clone(), e.into()))?;
    Ok(result)
}

pub fn gmc(a: &GmcArgs) -> Result<Value, CliError> {
    let params = GmcParams {
        c: a.clusters,
        k_neighbors: a.k,
        max_iter: a.max_iter,
    };
    Ok(run_store_gmc(&a.data, &params)?.to_json())
}

pub fn prism_export(a: &PrismArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let store = Store::load(&a.data)?;
    let obs = |t: &str| -> Result<_, CliError> {
        let id = ticker(t)?;
        store
            .observations(&id)
            .ok_or(CliError::Prism(PrismError::UnknownInstrument(id)))
    };
    let pair = prism::align_pair(obs(&a.a)?, obs(&a.b)?, a.from, a.to);
    let tri = prism::build_triangle(&pair, a.min_window)?;
    let write = |w: &mut dyn Write| match a.format {
        PrismFormat::Csv => tri.write_csv(w),
        PrismFormat::Bin => tri.write_binary(w),
    };
    match &a.out {
        Some(path) => {
            let file = fs::File::create(path).map_err(io(path))?;
            let mut w = BufWriter::new(file);
            write(&mut w).and_then(|_| w.flush()).map_err(io(path))
        }
        None => write(out).map_err(io(Path::new("<stdout>"))),
    }
}

pub fn synth_market(a: &SynthArgs) -> Result<Value, CliError> {
    let cfg = SynthConfig {
        stocks: a.stocks,
        years: a.years,
        communities: a.communities,
        seed: a.seed,
        start_year: a.start_year,
        community_loading: a.loading,
        agreement: a.agreement,
        ..SynthConfig::default()
    };
    if cfg.communities > cfg.stocks {
        return Err(CliError::Usage("more communities than stocks".into()));
    }
    if cfg.market_loading.powi(2) + cfg.community_loading.powi(2) > 1.0 {
        return Err(CliError::Usage(
            "loading too large: total variance share exceeds 1".into(),
        ));
    }
    let market = synth::generate(&cfg);
    synth::write_market(&market, &a.out)?;
    Ok(json!({
        "stocks": cfg.stocks,
        "days": market.series.first().map_or(0, |s| s.bars.len()),
        "communities": market.truth.communities.iter().map(Vec::len).collect::<Vec<_>>(),
        "benchmark": market.truth.benchmark,
    }))
}

pub fn serve(a: &ServeArgs) -> Result<(), CliError> {
    let benchmark = a.benchmark.as_deref().map(ticker).transpose()?;
    let state = Arc::new(AppState::open(&a.data, benchmark)?);
    let runtime = tokio::runtime::Runtime::new().map_err(io(Path::new("<runtime>")))?;
    runtime
        .block_on(prismatic_service::serve(state, a.port))
        .map_err(io(Path::new("<socket>")))
}
