//! Market data and company metadata ingestion.
//!
//! Prices arrive as a flat CSV (`ticker,date,close,volume`) and are grouped
//! into per-instrument [`DailySeries`]. Metadata arrives as a JSON array of
//! company profiles. Both are validated here; everything downstream assumes
//! sorted, duplicate-free series with positive closes.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{Read, Write};

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Exchange ticker, e.g. `600373`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InstrumentId(String);

impl InstrumentId {
    pub fn new(ticker: impl Into<String>) -> Result<Self, IngestError> {
        let ticker = ticker.into().trim().to_string();
        if ticker.is_empty() {
            return Err(IngestError::Schema("empty ticker".into()));
        }
        Ok(Self(ticker))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for InstrumentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for InstrumentId {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("line {line}: duplicate date {date} for {ticker}")]
    DuplicateDate {
        line: u64,
        ticker: InstrumentId,
        date: NaiveDate,
    },
    #[error("input contains no data rows")]
    EmptyInput,
    #[error("series for {0} has fewer than two bars")]
    SeriesTooShort(InstrumentId),
    #[error("schema error: {0}")]
    Schema(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DailyBar {
    pub date: NaiveDate,
    pub close: f64,
    pub volume: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailySeries {
    pub instrument: InstrumentId,
    pub bars: Vec<DailyBar>,
}

impl DailySeries {
    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    /// Bars whose date lies in `[from, to]`.
    pub fn range(&self, from: NaiveDate, to: NaiveDate) -> &[DailyBar] {
        let lo = self.bars.partition_point(|b| b.date < from);
        let hi = self.bars.partition_point(|b| b.date <= to);
        &self.bars[lo..hi.max(lo)]
    }
}

/// What the correlation routines consume: either log changes or raw levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    #[default]
    Returns,
    Levels,
}

/// Per-day observations aligned on `dates`.
///
/// Under [`Basis::Returns`] the values are log price returns and log volume
/// ratios dated at the later bar of each pair. Under [`Basis::Levels`] they
/// are the raw closes and volumes. Undefined entries are `NaN`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    pub instrument: InstrumentId,
    pub dates: Vec<NaiveDate>,
    pub price_returns: Vec<f64>,
    pub volume_changes: Vec<f64>,
}

impl ReturnSeries {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    fn empty_like(&self) -> Self {
        Self {
            instrument: self.instrument.clone(),
            dates: Vec::new(),
            price_returns: Vec::new(),
            volume_changes: Vec::new(),
        }
    }

    fn push_from(&mut self, other: &Self, k: usize) {
        self.dates.push(other.dates[k]);
        self.price_returns.push(other.price_returns[k]);
        self.volume_changes.push(other.volume_changes[k]);
    }

    /// Entries dated within `[from, to]`.
    pub fn slice_dates(&self, from: NaiveDate, to: NaiveDate) -> Self {
        let lo = self.dates.partition_point(|d| *d < from);
        let hi = self.dates.partition_point(|d| *d <= to).max(lo);
        Self {
            instrument: self.instrument.clone(),
            dates: self.dates[lo..hi].to_vec(),
            price_returns: self.price_returns[lo..hi].to_vec(),
            volume_changes: self.volume_changes[lo..hi].to_vec(),
        }
    }
}

/// A person, disambiguated by birth year.
///
/// When the birth year is unknown the identity is additionally scoped to the
/// company it was read from, so it can never merge with anyone else.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PersonIdentity {
    pub normalized_name: String,
    pub birth_year: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope: Option<InstrumentId>,
}

impl PersonIdentity {
    pub fn new(name: &str, birth_year: Option<i32>, source: &InstrumentId) -> Self {
        Self {
            normalized_name: normalize_name(name),
            birth_year,
            scope: birth_year.is_none().then(|| source.clone()),
        }
    }

    /// Stable textual key: `name@1970`, or `name@?600373` when the birth year
    /// is unknown.
    pub fn key(&self) -> String {
        match (self.birth_year, &self.scope) {
            (Some(y), _) => format!("{}@{}", self.normalized_name, y),
            (None, Some(s)) => format!("{}@?{}", self.normalized_name, s),
            (None, None) => format!("{}@?", self.normalized_name),
        }
    }

    pub fn parse_key(key: &str) -> Option<Self> {
        let (name, rest) = key.rsplit_once('@')?;
        if name.is_empty() {
            return None;
        }
        if let Some(scope) = rest.strip_prefix('?') {
            let scope = if scope.is_empty() {
                None
            } else {
                Some(InstrumentId::new(scope).ok()?)
            };
            return Some(Self {
                normalized_name: name.to_string(),
                birth_year: None,
                scope,
            });
        }
        Some(Self {
            normalized_name: name.to_string(),
            birth_year: Some(rest.parse().ok()?),
            scope: None,
        })
    }
}

/// Collapse internal whitespace runs to one space and trim; case is kept.
pub fn normalize_name(name: &str) -> String {
    name.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompanyProfile {
    pub instrument: InstrumentId,
    pub province: String,
    pub city: String,
    pub industry: String,
    pub concepts: BTreeSet<String>,
    pub managers: BTreeSet<PersonIdentity>,
    pub top_investors: BTreeSet<PersonIdentity>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IngestWarning {
    /// Profile ticker has no price series.
    UnknownInstrument(InstrumentId),
}

impl fmt::Display for IngestWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IngestWarning::UnknownInstrument(t) => write!(f, "profile for unknown instrument {t}"),
        }
    }
}

#[derive(Debug, Deserialize)]
struct PriceRow {
    ticker: String,
    date: String,
    close: String,
    volume: String,
}

/// Parse the prices CSV into one series per ticker, ordered by ticker.
pub fn parse_prices<R: Read>(source: R) -> Result<Vec<DailySeries>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| IngestError::Schema(e.to_string()))?
        .clone();
    let expected = ["ticker", "date", "close", "volume"];
    if headers.len() != expected.len() || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(IngestError::Schema(format!(
            "expected header `ticker,date,close,volume`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut grouped: BTreeMap<InstrumentId, Vec<(u64, DailyBar)>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| IngestError::MalformedRow {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let malformed = |reason: String| IngestError::MalformedRow { line, reason };
        let row: PriceRow = record
            .deserialize(Some(&headers))
            .map_err(|e| malformed(e.to_string()))?;
        let ticker = InstrumentId::new(row.ticker).map_err(|_| malformed("empty ticker".into()))?;
        let date = NaiveDate::parse_from_str(&row.date, "%Y-%m-%d")
            .map_err(|e| malformed(format!("bad date `{}`: {e}", row.date)))?;
        let close: f64 = row
            .close
            .parse()
            .map_err(|_| malformed(format!("bad close `{}`", row.close)))?;
        let volume: f64 = row
            .volume
            .parse()
            .map_err(|_| malformed(format!("bad volume `{}`", row.volume)))?;
        if !close.is_finite() || close <= 0.0 {
            return Err(malformed(format!("close must be positive, got {close}")));
        }
        if !volume.is_finite() || volume < 0.0 {
            return Err(malformed(format!(
                "volume must be non-negative, got {volume}"
            )));
        }
        grouped.entry(ticker).or_default().push((
            line,
            DailyBar {
                date,
                close,
                volume,
            },
        ));
    }
    if grouped.is_empty() {
        return Err(IngestError::EmptyInput);
    }

    grouped
        .into_iter()
        .map(|(instrument, mut rows)| {
            rows.sort_by_key(|(line, bar)| (bar.date, *line));
            if let Some(w) = rows.windows(2).find(|w| w[0].1.date == w[1].1.date) {
                return Err(IngestError::DuplicateDate {
                    line: w[1].0,
                    ticker: instrument,
                    date: w[1].1.date,
                });
            }
            Ok(DailySeries {
                instrument,
                bars: rows.into_iter().map(|(_, b)| b).collect(),
            })
        })
        .collect()
}

/// Write series back out in the prices CSV format, one block per series.
pub fn write_prices<W: Write>(series: &[DailySeries], sink: W) -> Result<(), IngestError> {
    let mut writer = csv::Writer::from_writer(sink);
    writer
        .write_record(["ticker", "date", "close", "volume"])
        .map_err(csv_io)?;
    for s in series {
        for bar in &s.bars {
            writer
                .write_record([
                    s.instrument.as_str(),
                    &bar.date.format("%Y-%m-%d").to_string(),
                    &bar.close.to_string(),
                    &bar.volume.to_string(),
                ])
                .map_err(csv_io)?;
        }
    }
    writer.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> IngestError {
    IngestError::Io(std::io::Error::other(e))
}

#[derive(Debug, Serialize, Deserialize)]
struct RawPerson {
    name: String,
    birth_year: Option<i32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawProfile {
    ticker: String,
    province: String,
    city: String,
    industry: String,
    #[serde(default)]
    concepts: Vec<String>,
    #[serde(default)]
    managers: Vec<RawPerson>,
    #[serde(default)]
    investors: Vec<RawPerson>,
}

/// Parse the metadata JSON array.
///
/// When `known` is given, profiles for tickers outside it are still returned
/// but reported as [`IngestWarning::UnknownInstrument`].
pub fn parse_metadata<R: Read>(
    source: R,
    known: Option<&HashSet<InstrumentId>>,
) -> Result<(Vec<CompanyProfile>, Vec<IngestWarning>), IngestError> {
    let raw: Vec<RawProfile> =
        serde_json::from_reader(source).map_err(|e| IngestError::Schema(e.to_string()))?;
    let mut seen = HashSet::new();
    let mut warnings = Vec::new();
    let mut profiles = Vec::with_capacity(raw.len());
    for (idx, p) in raw.into_iter().enumerate() {
        let instrument = InstrumentId::new(p.ticker)
            .map_err(|_| IngestError::Schema(format!("profile {idx}: empty ticker")))?;
        if !seen.insert(instrument.clone()) {
            return Err(IngestError::Schema(format!(
                "duplicate profile for {instrument}"
            )));
        }
        let province = p.province.trim().to_string();
        let city = p.city.trim().to_string();
        if province.is_empty() || city.is_empty() {
            return Err(IngestError::Schema(format!(
                "profile {instrument}: province and city must be non-empty"
            )));
        }
        if known.is_some_and(|k| !k.contains(&instrument)) {
            warnings.push(IngestWarning::UnknownInstrument(instrument.clone()));
        }
        let people = |list: Vec<RawPerson>| -> Result<BTreeSet<PersonIdentity>, IngestError> {
            list.into_iter()
                .map(|r| {
                    let person = PersonIdentity::new(&r.name, r.birth_year, &instrument);
                    if person.normalized_name.is_empty() {
                        Err(IngestError::Schema(format!(
                            "profile {instrument}: empty person name"
                        )))
                    } else {
                        Ok(person)
                    }
                })
                .collect()
        };
        profiles.push(CompanyProfile {
            managers: people(p.managers)?,
            top_investors: people(p.investors)?,
            province,
            city,
            industry: p.industry.trim().to_string(),
            concepts: p
                .concepts
                .iter()
                .map(|c| c.trim().to_string())
                .filter(|c| !c.is_empty())
                .collect(),
            instrument,
        });
    }
    profiles.sort_by(|a, b| a.instrument.cmp(&b.instrument));
    Ok((profiles, warnings))
}

/// Serialize profiles in the metadata JSON format.
pub fn write_metadata<W: Write>(profiles: &[CompanyProfile], sink: W) -> Result<(), IngestError> {
    let person = |p: &PersonIdentity| RawPerson {
        name: p.normalized_name.clone(),
        birth_year: p.birth_year,
    };
    let raw: Vec<RawProfile> = profiles
        .iter()
        .map(|p| RawProfile {
            ticker: p.instrument.to_string(),
            province: p.province.clone(),
            city: p.city.clone(),
            industry: p.industry.clone(),
            concepts: p.concepts.iter().cloned().collect(),
            managers: p.managers.iter().map(person).collect(),
            investors: p.top_investors.iter().map(person).collect(),
        })
        .collect();
    serde_json::to_writer_pretty(sink, &raw).map_err(|e| IngestError::Io(e.into()))
}

/// Log price returns and log volume ratios.
///
/// A volume change is `NaN` whenever either day has zero volume.
pub fn to_returns(series: &DailySeries) -> Result<ReturnSeries, IngestError> {
    if series.bars.len() < 2 {
        return Err(IngestError::SeriesTooShort(series.instrument.clone()));
    }
    let pairs = series.bars.windows(2);
    let mut out = ReturnSeries {
        instrument: series.instrument.clone(),
        dates: Vec::with_capacity(series.bars.len() - 1),
        price_returns: Vec::with_capacity(series.bars.len() - 1),
        volume_changes: Vec::with_capacity(series.bars.len() - 1),
    };
    for w in pairs {
        out.dates.push(w[1].date);
        out.price_returns.push((w[1].close / w[0].close).ln());
        out.volume_changes
            .push(if w[0].volume > 0.0 && w[1].volume > 0.0 {
                (w[1].volume / w[0].volume).ln()
            } else {
                f64::NAN
            });
    }
    Ok(out)
}

/// Raw closes and volumes in the [`ReturnSeries`] layout.
pub fn to_levels(series: &DailySeries) -> ReturnSeries {
    ReturnSeries {
        instrument: series.instrument.clone(),
        dates: series.bars.iter().map(|b| b.date).collect(),
        price_returns: series.bars.iter().map(|b| b.close).collect(),
        volume_changes: series.bars.iter().map(|b| b.volume).collect(),
    }
}

/// Observations under the configured basis.
pub fn observations(series: &DailySeries, basis: Basis) -> Result<ReturnSeries, IngestError> {
    match basis {
        Basis::Returns => to_returns(series),
        Basis::Levels => Ok(to_levels(series)),
    }
}

/// Split by calendar year of each entry's date.
pub fn partition_years(series: &ReturnSeries) -> BTreeMap<i32, ReturnSeries> {
    let mut out: BTreeMap<i32, ReturnSeries> = BTreeMap::new();
    for (k, date) in series.dates.iter().enumerate() {
        out.entry(date.year())
            .or_insert_with(|| series.empty_like())
            .push_from(series, k);
    }
    out
}
