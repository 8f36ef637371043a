//! Yearly all-pairs correlation caches and their binary file format.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! "PRC1" | version u32 | m u32 | m × (u16 len, UTF-8 ticker)
//! | pearson_price f32[P] | spearman_price f32[P]
//! | pearson_volume f32[P] | spearman_volume f32[P] | overlap u16[P]
//! ```
//!
//! where `P = m(m-1)/2` and pairs are laid out row-major over the upper
//! triangle. `NaN` marks an undefined value.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stats::{average_ranks, pearson_complete, MIN_POINTS};
use super::CorrError;
use crate::ingest::{InstrumentId, ReturnSeries};
use crate::store::Store;

pub const CACHE_MAGIC: &[u8; 4] = b"PRC1";
pub const CACHE_VERSION: u32 = 1;
pub const HISTOGRAM_BINS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    PearsonPrice,
    SpearmanPrice,
    PearsonVolume,
    SpearmanVolume,
}

impl Measure {
    pub const ALL: [Measure; 4] = [
        Measure::PearsonPrice,
        Measure::SpearmanPrice,
        Measure::PearsonVolume,
        Measure::SpearmanVolume,
    ];
}

/// One pair's correlations. `None` means undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEdge {
    pub a: InstrumentId,
    pub b: InstrumentId,
    pub pearson_price: Option<f64>,
    pub spearman_price: Option<f64>,
    pub pearson_volume: Option<f64>,
    pub spearman_volume: Option<f64>,
    pub overlap_days: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct YearlyCorrelationCache {
    pub year: i32,
    /// Sorted by ticker.
    pub instruments: Vec<InstrumentId>,
    pub pearson_price: Vec<f64>,
    pub spearman_price: Vec<f64>,
    pub pearson_volume: Vec<f64>,
    pub spearman_volume: Vec<f64>,
    pub overlap: Vec<u32>,
}

/// Position of pair `(i, j)`, `i < j`, in an `m`-instrument upper triangle.
pub fn pair_index(i: usize, j: usize, m: usize) -> usize {
    debug_assert!(i < j && j < m);
    i * (2 * m - i - 1) / 2 + (j - i - 1)
}

pub fn pair_count(m: usize) -> usize {
    m * m.saturating_sub(1) / 2
}

impl YearlyCorrelationCache {
    pub fn len(&self) -> usize {
        self.instruments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instruments.is_empty()
    }

    pub fn position(&self, id: &InstrumentId) -> Option<usize> {
        self.instruments.binary_search(id).ok()
    }

    pub fn values(&self, measure: Measure) -> &[f64] {
        match measure {
            Measure::PearsonPrice => &self.pearson_price,
            Measure::SpearmanPrice => &self.spearman_price,
            Measure::PearsonVolume => &self.pearson_volume,
            Measure::SpearmanVolume => &self.spearman_volume,
        }
    }

    /// Value between instrument positions `i` and `j` (either order).
    pub fn value(&self, measure: Measure, i: usize, j: usize) -> Option<f64> {
        if i == j {
            return None;
        }
        let (lo, hi) = if i < j { (i, j) } else { (j, i) };
        let v = self.values(measure)[pair_index(lo, hi, self.len())];
        (!v.is_nan()).then_some(v)
    }

    pub fn overlap_days(&self, i: usize, j: usize) -> u32 {
        if i == j {
            return 0;
        }
        let (lo, hi) = if i < j { (i, j) } else { (j, i) };
        self.overlap[pair_index(lo, hi, self.len())]
    }

    pub fn edge(&self, a: &InstrumentId, b: &InstrumentId) -> Result<CorrelationEdge, CorrError> {
        let i = self
            .position(a)
            .ok_or_else(|| CorrError::UnknownInstrument(a.clone()))?;
        let j = self
            .position(b)
            .ok_or_else(|| CorrError::UnknownInstrument(b.clone()))?;
        Ok(CorrelationEdge {
            a: a.clone(),
            b: b.clone(),
            pearson_price: self.value(Measure::PearsonPrice, i, j),
            spearman_price: self.value(Measure::SpearmanPrice, i, j),
            pearson_volume: self.value(Measure::PearsonVolume, i, j),
            spearman_volume: self.value(Measure::SpearmanVolume, i, j),
            overlap_days: self.overlap_days(i, j),
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&CACHE_VERSION.to_le_bytes())?;
        write_table(&mut w, &self.instruments)?;
        for measure in Measure::ALL {
            for v in self.values(measure) {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        for o in &self.overlap {
            w.write_all(&(u16::try_from(*o).unwrap_or(u16::MAX)).to_le_bytes())?;
        }
        w.flush()
    }

    /// Read a cache file. The year is not part of the format and comes from
    /// the caller (the file name, in a store).
    pub fn read_from<R: Read>(mut r: R, year: i32) -> Result<Self, CorrError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(CorrError::Format("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CACHE_VERSION {
            return Err(CorrError::Format(format!("unsupported version {version}")));
        }
        let instruments = read_table(&mut r)?;
        let pairs = pair_count(instruments.len());
        let mut arrays = Vec::with_capacity(4);
        for _ in 0..4 {
            let mut buf = vec![0u8; pairs * 4];
            r.read_exact(&mut buf)?;
            arrays.push(
                buf.chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                    .collect::<Vec<_>>(),
            );
        }
        let mut buf = vec![0u8; pairs * 2];
        r.read_exact(&mut buf)?;
        let overlap = buf
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as u32)
            .collect();
        let spearman_volume = arrays.pop().unwrap_or_default();
        let pearson_volume = arrays.pop().unwrap_or_default();
        let spearman_price = arrays.pop().unwrap_or_default();
        let pearson_price = arrays.pop().unwrap_or_default();
        Ok(Self {
            year,
            instruments,
            pearson_price,
            spearman_price,
            pearson_volume,
            spearman_volume,
            overlap,
        })
    }

    /// Instrument count from a cache file header without reading the arrays.
    pub fn read_header<R: Read>(mut r: R) -> Result<usize, CorrError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(CorrError::Format("bad magic".into()));
        }
        read_u32(&mut r)?;
        Ok(read_u32(&mut r)? as usize)
    }
}

pub(crate) fn write_table<W: Write>(w: &mut W, ids: &[InstrumentId]) -> std::io::Result<()> {
    w.write_all(&(ids.len() as u32).to_le_bytes())?;
    for id in ids {
        write_str(w, id.as_str())?;
    }
    Ok(())
}

pub(crate) fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    let bytes = s.as_bytes();
    let len = u16::try_from(bytes.len())
        .map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidInput, "ticker too long"))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(bytes)
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_str<R: Read>(r: &mut R) -> Result<String, CorrError> {
    let mut len = [0u8; 2];
    r.read_exact(&mut len)?;
    let mut buf = vec![0u8; u16::from_le_bytes(len) as usize];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| CorrError::Format(e.to_string()))
}

pub(crate) fn read_table<R: Read>(r: &mut R) -> Result<Vec<InstrumentId>, CorrError> {
    let m = read_u32(r)? as usize;
    (0..m)
        .map(|_| InstrumentId::new(read_str(r)?).map_err(|e| CorrError::Format(e.to_string())))
        .collect()
}

/// Dense per-instrument columns on a shared date axis, `NaN` where missing.
struct Panel {
    price: Vec<Vec<f64>>,
    volume: Vec<Vec<f64>>,
    price_valid: Vec<usize>,
    volume_valid: Vec<usize>,
    price_ranks: Vec<Vec<f64>>,
    volume_ranks: Vec<Vec<f64>>,
}

impl Panel {
    fn new(columns: &[&ReturnSeries]) -> Self {
        let axis: Vec<NaiveDate> = {
            let mut all: Vec<NaiveDate> = columns
                .iter()
                .flat_map(|c| c.dates.iter().copied())
                .collect();
            all.sort_unstable();
            all.dedup();
            all
        };
        let slot: BTreeMap<NaiveDate, usize> =
            axis.iter().enumerate().map(|(k, d)| (*d, k)).collect();
        let spread = |values: &[f64], dates: &[NaiveDate]| {
            let mut out = vec![f64::NAN; axis.len()];
            for (v, d) in values.iter().zip(dates) {
                out[slot[d]] = *v;
            }
            out
        };
        let price: Vec<Vec<f64>> = columns
            .iter()
            .map(|c| spread(&c.price_returns, &c.dates))
            .collect();
        let volume: Vec<Vec<f64>> = columns
            .iter()
            .map(|c| spread(&c.volume_changes, &c.dates))
            .collect();
        let count = |v: &Vec<f64>| v.iter().filter(|x| x.is_finite()).count();
        let ranks = |v: &Vec<f64>| {
            let finite: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
            average_ranks(&finite)
        };
        Self {
            price_valid: price.iter().map(count).collect(),
            volume_valid: volume.iter().map(count).collect(),
            price_ranks: price.iter().map(ranks).collect(),
            volume_ranks: volume.iter().map(ranks).collect(),
            price,
            volume,
        }
    }
}

/// Pearson and Spearman over the pairwise-complete days of two columns.
/// Returns `(pearson, spearman, usable_days)`.
fn pair_measures(
    x: &[f64],
    y: &[f64],
    x_valid: usize,
    y_valid: usize,
    x_ranks: &[f64],
    y_ranks: &[f64],
) -> (Option<f64>, Option<f64>, usize) {
    let (xs, ys): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter(|(a, b)| a.is_finite() && b.is_finite())
        .map(|(a, b)| (*a, *b))
        .unzip();
    let n = xs.len();
    if n < MIN_POINTS {
        return (None, None, n);
    }
    let pearson = pearson_complete(&xs, &ys);
    let spearman = if n == x_valid && n == y_valid {
        // both columns are fully present on the shared days; reuse ranks
        pearson_complete(x_ranks, y_ranks)
    } else {
        pearson_complete(&average_ranks(&xs), &average_ranks(&ys))
    };
    (pearson, spearman, n)
}

/// All-pairs correlations for instruments with observations in `year`.
///
/// Instruments are ordered by ticker; output is independent of evaluation
/// order.
pub fn build_yearly_cache(store: &Store, year: i32) -> Result<YearlyCorrelationCache, CorrError> {
    let observations = store.year_observations(year);
    build_cache_from(year, &observations, store.config.min_overlap)
}

pub fn build_cache_from(
    year: i32,
    observations: &BTreeMap<InstrumentId, ReturnSeries>,
    min_overlap: usize,
) -> Result<YearlyCorrelationCache, CorrError> {
    if observations.is_empty() {
        return Err(CorrError::EmptyYear(year));
    }
    let instruments: Vec<InstrumentId> = observations.keys().cloned().collect();
    let columns: Vec<&ReturnSeries> = observations.values().collect();
    let panel = Panel::new(&columns);
    let m = instruments.len();
    let pairs: Vec<(usize, usize)> = (0..m)
        .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
        .collect();
    // rounded to the file's precision so built and loaded caches agree
    let gate = |v: Option<f64>, n: usize| match v {
        Some(r) if n >= min_overlap => r as f32 as f64,
        _ => f64::NAN,
    };
    let rows: Vec<([f64; 4], u32)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (pp, sp, n_price) = pair_measures(
                &panel.price[i],
                &panel.price[j],
                panel.price_valid[i],
                panel.price_valid[j],
                &panel.price_ranks[i],
                &panel.price_ranks[j],
            );
            let (pv, sv, n_volume) = pair_measures(
                &panel.volume[i],
                &panel.volume[j],
                panel.volume_valid[i],
                panel.volume_valid[j],
                &panel.volume_ranks[i],
                &panel.volume_ranks[j],
            );
            (
                [
                    gate(pp, n_price),
                    gate(sp, n_price),
                    gate(pv, n_volume),
                    gate(sv, n_volume),
                ],
                n_price.min(u16::MAX as usize) as u32,
            )
        })
        .collect();
    Ok(YearlyCorrelationCache {
        year,
        instruments,
        pearson_price: rows.iter().map(|r| r.0[0]).collect(),
        spearman_price: rows.iter().map(|r| r.0[1]).collect(),
        pearson_volume: rows.iter().map(|r| r.0[2]).collect(),
        spearman_volume: rows.iter().map(|r| r.0[3]).collect(),
        overlap: rows.iter().map(|r| r.1).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationDistribution {
    pub subject: InstrumentId,
    pub year: i32,
    /// Lower edges run from -1 in steps of `2 / bins`; the last bin is closed.
    pub counts: Vec<u32>,
    pub total: u32,
}

pub fn histogram_bin(value: f64) -> usize {
    let width = 2.0 / HISTOGRAM_BINS as f64;
    (((value + 1.0) / width).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1)
}

/// Histogram of the subject's defined price Pearson values against all others.
pub fn correlation_distribution(
    cache: &YearlyCorrelationCache,
    subject: &InstrumentId,
) -> Result<CorrelationDistribution, CorrError> {
    let i = cache
        .position(subject)
        .ok_or_else(|| CorrError::UnknownInstrument(subject.clone()))?;
    let mut counts = vec![0u32; HISTOGRAM_BINS];
    for j in (0..cache.len()).filter(|&j| j != i) {
        if let Some(v) = cache.value(Measure::PearsonPrice, i, j) {
            counts[histogram_bin(v)] += 1;
        }
    }
    Ok(CorrelationDistribution {
        subject: subject.clone(),
        year: cache.year,
        total: counts.iter().sum(),
        counts,
    })
}
