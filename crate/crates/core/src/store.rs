//! The normalized on-disk store shared by every command.
//!
//! Layout of a store directory:
//!
//! ```text
//! store.json      StoreConfig
//! prices.csv      normalized prices, sorted by ticker then date
//! meta.json       company profiles
//! cache/<year>.prc   yearly correlation caches (written by `corr`)
//! gmc.json        latest multi-view clustering result (written by `gmc`)
//! ```

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use chrono::Datelike;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{
    self, Basis, CompanyProfile, DailySeries, IngestError, IngestWarning, InstrumentId,
    ReturnSeries,
};

pub const CONFIG_FILE: &str = "store.json";
pub const PRICES_FILE: &str = "prices.csv";
pub const META_FILE: &str = "meta.json";
pub const CACHE_DIR: &str = "cache";
pub const GMC_FILE: &str = "gmc.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("benchmark {0} has no price series")]
    MissingBenchmark(InstrumentId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreConfig {
    #[serde(default)]
    pub basis: Basis,
    #[serde(default)]
    pub benchmark: Option<InstrumentId>,
    #[serde(default = "default_min_overlap")]
    pub min_overlap: usize,
}

fn default_min_overlap() -> usize {
    30
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            basis: Basis::Returns,
            benchmark: None,
            min_overlap: default_min_overlap(),
        }
    }
}

/// Immutable in-memory view of a store.
#[derive(Debug, Clone)]
pub struct Store {
    pub config: StoreConfig,
    pub series: BTreeMap<InstrumentId, DailySeries>,
    pub profiles: Vec<CompanyProfile>,
    observations: BTreeMap<InstrumentId, ReturnSeries>,
}

impl Store {
    pub fn new(
        config: StoreConfig,
        series: Vec<DailySeries>,
        profiles: Vec<CompanyProfile>,
    ) -> Result<Self, StoreError> {
        let series: BTreeMap<_, _> = series
            .into_iter()
            .map(|s| (s.instrument.clone(), s))
            .collect();
        if let Some(b) = &config.benchmark {
            if !series.contains_key(b) {
                return Err(StoreError::MissingBenchmark(b.clone()));
            }
        }
        let observations = series
            .values()
            .filter(|s| config.basis == Basis::Levels || s.len() >= 2)
            .map(|s| Ok((s.instrument.clone(), ingest::observations(s, config.basis)?)))
            .collect::<Result<_, IngestError>>()?;
        Ok(Self {
            config,
            series,
            profiles,
            observations,
        })
    }

    /// Build a store from raw CSV/JSON inputs. Returns metadata warnings.
    pub fn ingest(
        prices: &Path,
        meta: &Path,
        config: StoreConfig,
    ) -> Result<(Self, Vec<IngestWarning>), StoreError> {
        let series = ingest::parse_prices(BufReader::new(open(prices)?))?;
        let known: HashSet<_> = series.iter().map(|s| s.instrument.clone()).collect();
        let (profiles, warnings) =
            ingest::parse_metadata(BufReader::new(open(meta)?), Some(&known))?;
        Ok((Self::new(config, series, profiles)?, warnings))
    }

    pub fn save(&self, dir: &Path) -> Result<(), StoreError> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let cfg_path = dir.join(CONFIG_FILE);
        serde_json::to_writer_pretty(BufWriter::new(create(&cfg_path)?), &self.config).map_err(
            |e| StoreError::Format {
                path: cfg_path.clone(),
                message: e.to_string(),
            },
        )?;
        let series: Vec<DailySeries> = self.series.values().cloned().collect();
        ingest::write_prices(&series, BufWriter::new(create(&dir.join(PRICES_FILE))?))?;
        ingest::write_metadata(
            &self.profiles,
            BufWriter::new(create(&dir.join(META_FILE))?),
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, StoreError> {
        let cfg_path = dir.join(CONFIG_FILE);
        let config: StoreConfig = serde_json::from_reader(BufReader::new(open(&cfg_path)?))
            .map_err(|e| StoreError::Format {
                path: cfg_path.clone(),
                message: e.to_string(),
            })?;
        let series = ingest::parse_prices(BufReader::new(open(&dir.join(PRICES_FILE))?))?;
        let (profiles, _) =
            ingest::parse_metadata(BufReader::new(open(&dir.join(META_FILE))?), None)?;
        Self::new(config, series, profiles)
    }

    pub fn instruments(&self) -> impl Iterator<Item = &InstrumentId> {
        self.series.keys()
    }

    /// Observations (returns or levels, per config) for one instrument.
    pub fn observations(&self, id: &InstrumentId) -> Option<&ReturnSeries> {
        self.observations.get(id)
    }

    /// Observations partitioned into calendar years.
    pub fn year_observations(&self, year: i32) -> BTreeMap<InstrumentId, ReturnSeries> {
        self.observations
            .iter()
            .filter_map(|(id, obs)| {
                let from = chrono::NaiveDate::from_ymd_opt(year, 1, 1)?;
                let to = chrono::NaiveDate::from_ymd_opt(year, 12, 31)?;
                let part = obs.slice_dates(from, to);
                (!part.is_empty()).then(|| (id.clone(), part))
            })
            .collect()
    }

    pub fn years(&self) -> BTreeSet<i32> {
        self.observations
            .values()
            .flat_map(|o| o.dates.iter().map(|d| d.year()))
            .collect()
    }

    pub fn profile(&self, id: &InstrumentId) -> Option<&CompanyProfile> {
        self.profiles
            .binary_search_by(|p| p.instrument.cmp(id))
            .ok()
            .map(|i| &self.profiles[i])
    }

    pub fn industry_map(&self) -> BTreeMap<InstrumentId, String> {
        self.profiles
            .iter()
            .map(|p| (p.instrument.clone(), p.industry.clone()))
            .collect()
    }
}

pub fn cache_path(dir: &Path, year: i32) -> PathBuf {
    dir.join(CACHE_DIR).join(format!("{year}.prc"))
}

/// Years with a cache file present, ascending.
pub fn cached_years(dir: &Path) -> Result<Vec<i32>, StoreError> {
    let cache_dir = dir.join(CACHE_DIR);
    if !cache_dir.exists() {
        return Ok(Vec::new());
    }
    let mut years = Vec::new();
    for entry in std::fs::read_dir(&cache_dir).map_err(|e| io_err(&cache_dir, e))? {
        let entry = entry.map_err(|e| io_err(&cache_dir, e))?;
        let path = entry.path();
        if path.extension().is_some_and(|e| e == "prc") {
            if let Some(y) = path
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.parse().ok())
            {
                years.push(y);
            }
        }
    }
    years.sort_unstable();
    Ok(years)
}

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> StoreError {
    StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn open(path: &Path) -> Result<File, StoreError> {
    File::open(path).map_err(|e| io_err(path, e))
}

pub(crate) fn create(path: &Path) -> Result<File, StoreError> {
    File::create(path).map_err(|e| io_err(path, e))
}
