//! Correlation prisms: Pearson correlation over every subinterval of an
//! aligned series pair, laid out as a triangle.
//!
//! Cell `(x, y)` (origin top-left, 0-indexed) holds the window of size
//! `w = n - y` ending at day `x`, so row `y` spans `n-1-y ..= n-1`. The
//! single cell of row 0 is the full-series value. Cells are stored in a flat
//! array of length `n(n+1)/2`, row by row:
//!
//! ```text
//! y = floor((sqrt(8i + 1) - 1) / 2)
//! x = n - 1 - y + i - y(y+1)/2
//! ```
//!
//! Each cell costs O(1) through prefix sums of the centered moments.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corrnet::cache::{read_str, read_u32, write_str};
use crate::corrnet::CorrError;
use crate::ingest::{InstrumentId, ReturnSeries};
use crate::store::Store;

pub const DEFAULT_MIN_WINDOW: usize = 5;
pub const PRISM_MAGIC: &[u8; 4] = b"PRT1";
pub const PRISM_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PrismError {
    #[error("index {i} out of range for n = {n}")]
    IndexOutOfRange { i: usize, n: usize },
    #[error("cell ({x}, {y}) is not valid for n = {n}")]
    InvalidCell { x: usize, y: usize, n: usize },
    #[error("series has {n} aligned days, need at least {min_window}")]
    SeriesTooShort { n: usize, min_window: usize },
    #[error("no benchmark configured")]
    MissingBenchmark,
    #[error("no industry peers for {0}")]
    EmptyIndustry(InstrumentId),
    #[error("unknown instrument {0}")]
    UnknownInstrument(InstrumentId),
    #[error("prism format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<CorrError> for PrismError {
    fn from(e: CorrError) -> Self {
        match e {
            CorrError::Io(io) => PrismError::Io(io),
            other => PrismError::Format(other.to_string()),
        }
    }
}

pub fn cell_count(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Flat index to `(x, y)`.
pub fn index_to_cell(i: usize, n: usize) -> Result<(usize, usize), PrismError> {
    if i >= cell_count(n) {
        return Err(PrismError::IndexOutOfRange { i, n });
    }
    let mut y = ((((8 * i + 1) as f64).sqrt() - 1.0) / 2.0).floor() as usize;
    // guard the float sqrt against off-by-one at large i
    while (y + 1) * (y + 2) / 2 <= i {
        y += 1;
    }
    while y * (y + 1) / 2 > i {
        y -= 1;
    }
    let x = n - 1 - y + i - y * (y + 1) / 2;
    Ok((x, y))
}

/// `(x, y)` to flat index; inverse of [`index_to_cell`].
pub fn cell_to_index(x: usize, y: usize, n: usize) -> Result<usize, PrismError> {
    if y >= n || x >= n || x + y < n - 1 {
        return Err(PrismError::InvalidCell { x, y, n });
    }
    Ok(y * (y + 1) / 2 + x - (n - 1 - y))
}

/// Two series on a shared date axis. Missing or undefined days are `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPair {
    pub a: String,
    pub b: String,
    pub dates: Vec<NaiveDate>,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl AlignedPair {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Days `start..=end` of the axis.
    pub fn slice(&self, start: usize, end: usize) -> AlignedPair {
        AlignedPair {
            a: self.a.clone(),
            b: self.b.clone(),
            dates: self.dates[start..=end].to_vec(),
            xs: self.xs[start..=end].to_vec(),
            ys: self.ys[start..=end].to_vec(),
        }
    }
}

/// Align price observations of two series on the union of their dates in
/// `[from, to]`.
pub fn align_pair(
    a: &ReturnSeries,
    b: &ReturnSeries,
    from: NaiveDate,
    to: NaiveDate,
) -> AlignedPair {
    let a = a.slice_dates(from, to);
    let b = b.slice_dates(from, to);
    let mut axis: BTreeMap<NaiveDate, (f64, f64)> = BTreeMap::new();
    for (d, v) in a.dates.iter().zip(&a.price_returns) {
        axis.entry(*d).or_insert((f64::NAN, f64::NAN)).0 = *v;
    }
    for (d, v) in b.dates.iter().zip(&b.price_returns) {
        axis.entry(*d).or_insert((f64::NAN, f64::NAN)).1 = *v;
    }
    AlignedPair {
        a: a.instrument.to_string(),
        b: b.instrument.to_string(),
        dates: axis.keys().copied().collect(),
        xs: axis.values().map(|v| v.0).collect(),
        ys: axis.values().map(|v| v.1).collect(),
    }
}

/// Prefix sums of the centered pair moments over days where both values are
/// finite, with a leading zero.
#[derive(Debug, Clone)]
pub struct PrefixMoments {
    sa: Vec<f64>,
    sb: Vec<f64>,
    saa: Vec<f64>,
    sbb: Vec<f64>,
    sab: Vec<f64>,
    count: Vec<usize>,
}

impl PrefixMoments {
    pub fn new(xs: &[f64], ys: &[f64]) -> Self {
        let n = xs.len().min(ys.len());
        let valid = |k: usize| xs[k].is_finite() && ys[k].is_finite();
        let (mut ma, mut mb, mut c) = (0.0, 0.0, 0usize);
        for k in (0..n).filter(|&k| valid(k)) {
            ma += xs[k];
            mb += ys[k];
            c += 1;
        }
        if c > 0 {
            ma /= c as f64;
            mb /= c as f64;
        }
        let mut out = Self {
            sa: Vec::with_capacity(n + 1),
            sb: Vec::with_capacity(n + 1),
            saa: Vec::with_capacity(n + 1),
            sbb: Vec::with_capacity(n + 1),
            sab: Vec::with_capacity(n + 1),
            count: Vec::with_capacity(n + 1),
        };
        let (mut sa, mut sb, mut saa, mut sbb, mut sab, mut cnt) = (0.0, 0.0, 0.0, 0.0, 0.0, 0);
        out.push(sa, sb, saa, sbb, sab, cnt);
        for k in 0..n {
            if valid(k) {
                let (a, b) = (xs[k] - ma, ys[k] - mb);
                sa += a;
                sb += b;
                saa += a * a;
                sbb += b * b;
                sab += a * b;
                cnt += 1;
            }
            out.push(sa, sb, saa, sbb, sab, cnt);
        }
        out
    }

    fn push(&mut self, sa: f64, sb: f64, saa: f64, sbb: f64, sab: f64, cnt: usize) {
        self.sa.push(sa);
        self.sb.push(sb);
        self.saa.push(saa);
        self.sbb.push(sbb);
        self.sab.push(sab);
        self.count.push(cnt);
    }

    /// Number of days covered.
    pub fn len(&self) -> usize {
        self.count.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Usable days in `[start, end]`.
    pub fn valid_count(&self, start: usize, end: usize) -> usize {
        self.count[end + 1] - self.count[start]
    }
}

/// Pearson over days `start..=end` in O(1). `NaN` when fewer than
/// `min_window` usable days or either side has no variance.
pub fn interval_pearson(m: &PrefixMoments, start: usize, end: usize, min_window: usize) -> f64 {
    debug_assert!(start <= end && end < m.len());
    let cnt = m.valid_count(start, end);
    if cnt < min_window.max(2) {
        return f64::NAN;
    }
    let k = cnt as f64;
    let (lo, hi) = (start, end + 1);
    let sa = m.sa[hi] - m.sa[lo];
    let sb = m.sb[hi] - m.sb[lo];
    let var_a = (m.saa[hi] - m.saa[lo]) - sa * sa / k;
    let var_b = (m.sbb[hi] - m.sbb[lo]) - sb * sb / k;
    let cov = (m.sab[hi] - m.sab[lo]) - sa * sb / k;
    // below this the difference of prefix sums is rounding noise
    let floor_a = 1e-10 * m.saa[hi];
    let floor_b = 1e-10 * m.sbb[hi];
    if var_a <= floor_a || var_b <= floor_b {
        return f64::NAN;
    }
    (cov / (var_a * var_b).sqrt()).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrismTriangle {
    pub a: String,
    pub b: String,
    pub dates: Vec<NaiveDate>,
    pub n: usize,
    pub min_window: usize,
    /// Flat cells, `NaN` where undefined.
    pub values: Vec<f64>,
}

impl PrismTriangle {
    pub fn start_date(&self) -> Option<NaiveDate> {
        self.dates.first().copied()
    }

    pub fn end_date(&self) -> Option<NaiveDate> {
        self.dates.last().copied()
    }

    /// Window size of row `y`.
    pub fn window(&self, y: usize) -> usize {
        self.n - y
    }

    pub fn get(&self, x: usize, y: usize) -> Result<f64, PrismError> {
        Ok(self.values[cell_to_index(x, y, self.n)?])
    }

    /// The tip: correlation over the whole range.
    pub fn full_correlation(&self) -> f64 {
        self.values.first().copied().unwrap_or(f64::NAN)
    }

    /// Export as CSV `i,x,y,window,end_date,corr`; undefined cells are empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "i,x,y,window,end_date,corr")?;
        for (i, v) in self.values.iter().enumerate() {
            let (x, y) = index_to_cell(i, self.n).map_err(std::io::Error::other)?;
            let corr = if v.is_nan() {
                String::new()
            } else {
                v.to_string()
            };
            writeln!(
                w,
                "{i},{x},{y},{},{},{corr}",
                self.window(y),
                self.dates[x].format("%Y-%m-%d")
            )?;
        }
        w.flush()
    }

    /// Binary export:
    /// `"PRT1" | version u32 | n u32 | min_window u32 | a (u16 len, UTF-8)
    /// | b (u16 len, UTF-8) | n × i32 day number | f32[n(n+1)/2]`, little-endian.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(PRISM_MAGIC)?;
        w.write_all(&PRISM_VERSION.to_le_bytes())?;
        w.write_all(&(self.n as u32).to_le_bytes())?;
        w.write_all(&(self.min_window as u32).to_le_bytes())?;
        write_str(&mut w, &self.a)?;
        write_str(&mut w, &self.b)?;
        for d in &self.dates {
            w.write_all(&d.num_days_from_ce().to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        w.flush()
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self, PrismError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != PRISM_MAGIC {
            return Err(PrismError::Format("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != PRISM_VERSION {
            return Err(PrismError::Format(format!("unsupported version {version}")));
        }
        let n = read_u32(&mut r)? as usize;
        let min_window = read_u32(&mut r)? as usize;
        let a = read_str(&mut r)?;
        let b = read_str(&mut r)?;
        let dates = (0..n)
            .map(|_| {
                let day = read_u32(&mut r)? as i32;
                NaiveDate::from_num_days_from_ce_opt(day)
                    .ok_or_else(|| PrismError::Format(format!("bad day number {day}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut buf = vec![0u8; cell_count(n) * 4];
        r.read_exact(&mut buf)?;
        let values = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Ok(Self {
            a,
            b,
            dates,
            n,
            min_window,
            values,
        })
    }
}

/// Fill every cell of the triangle for an aligned pair.
pub fn build_triangle(pair: &AlignedPair, min_window: usize) -> Result<PrismTriangle, PrismError> {
    let n = pair.len();
    if n == 0 || n < min_window {
        return Err(PrismError::SeriesTooShort { n, min_window });
    }
    let moments = PrefixMoments::new(&pair.xs, &pair.ys);
    let mut values = Vec::with_capacity(cell_count(n));
    for y in 0..n {
        let w = n - y;
        for x in (n - 1 - y)..n {
            values.push(interval_pearson(&moments, x + 1 - w, x, min_window));
        }
    }
    Ok(PrismTriangle {
        a: pair.a.clone(),
        b: pair.b.clone(),
        dates: pair.dates.clone(),
        n,
        min_window,
        values,
    })
}

/// Day-wise equal-weighted mean of the members' price observations.
pub fn industry_average(label: &str, members: &[&ReturnSeries]) -> ReturnSeries {
    let mut sums: BTreeMap<NaiveDate, (f64, usize, f64, usize)> = BTreeMap::new();
    for m in members {
        for k in 0..m.len() {
            let e = sums.entry(m.dates[k]).or_insert((0.0, 0, 0.0, 0));
            if m.price_returns[k].is_finite() {
                e.0 += m.price_returns[k];
                e.1 += 1;
            }
            if m.volume_changes[k].is_finite() {
                e.2 += m.volume_changes[k];
                e.3 += 1;
            }
        }
    }
    let mean = |s: f64, c: usize| if c > 0 { s / c as f64 } else { f64::NAN };
    ReturnSeries {
        instrument: InstrumentId::new(label).unwrap_or_else(|_| members[0].instrument.clone()),
        dates: sums.keys().copied().collect(),
        price_returns: sums.values().map(|v| mean(v.0, v.1)).collect(),
        volume_changes: sums.values().map(|v| mean(v.2, v.3)).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePrisms {
    pub market: PrismTriangle,
    pub industry: PrismTriangle,
    pub pair: Option<PrismTriangle>,
}

/// Prisms of `stock` against the benchmark, its industry average and,
/// optionally, another stock.
pub fn reference_prisms(
    store: &Store,
    stock: &InstrumentId,
    versus: Option<&InstrumentId>,
    from: NaiveDate,
    to: NaiveDate,
    min_window: usize,
) -> Result<ReferencePrisms, PrismError> {
    let obs = |id: &InstrumentId| {
        store
            .observations(id)
            .ok_or_else(|| PrismError::UnknownInstrument(id.clone()))
    };
    let target = obs(stock)?;
    let benchmark = store
        .config
        .benchmark
        .as_ref()
        .ok_or(PrismError::MissingBenchmark)?;
    let market = build_triangle(&align_pair(target, obs(benchmark)?, from, to), min_window)?;

    let industry = store
        .profile(stock)
        .map(|p| p.industry.clone())
        .filter(|i| !i.is_empty())
        .ok_or_else(|| PrismError::EmptyIndustry(stock.clone()))?;
    let peers: Vec<&ReturnSeries> = store
        .profiles
        .iter()
        .filter(|p| p.industry == industry)
        .filter_map(|p| store.observations(&p.instrument))
        .collect();
    if peers.is_empty() {
        return Err(PrismError::EmptyIndustry(stock.clone()));
    }
    let index = industry_average(&format!("industry:{industry}"), &peers);
    let industry = build_triangle(&align_pair(target, &index, from, to), min_window)?;

    let pair = versus
        .map(|other| build_triangle(&align_pair(target, obs(other)?, from, to), min_window))
        .transpose()?;
    Ok(ReferencePrisms {
        market,
        industry,
        pair,
    })
}

/// Heuristic shock annotation: days whose column shifts sharply from the
/// previous day's column.
///
/// For each end day `x`, takes the mean absolute difference between cells
/// `(x, y)` and `(x-1, y)` over rows where both are defined, then flags
/// days whose mean lies more than `z` standard deviations above the average
/// across days. Returns flagged day indices.
pub fn flag_column_shifts(tri: &PrismTriangle, z: f64) -> Vec<usize> {
    let n = tri.n;
    let shifts: Vec<(usize, f64)> = (1..n)
        .filter_map(|x| {
            let (mut sum, mut cnt) = (0.0, 0usize);
            for y in (n - x)..n {
                let (Ok(cur), Ok(prev)) = (tri.get(x, y), tri.get(x - 1, y)) else {
                    continue;
                };
                if cur.is_finite() && prev.is_finite() {
                    sum += (cur - prev).abs();
                    cnt += 1;
                }
            }
            (cnt > 0).then(|| (x, sum / cnt as f64))
        })
        .collect();
    if shifts.len() < 2 {
        return Vec::new();
    }
    let k = shifts.len() as f64;
    let mean = shifts.iter().map(|s| s.1).sum::<f64>() / k;
    let sd = (shifts.iter().map(|s| (s.1 - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
    if sd == 0.0 {
        return Vec::new();
    }
    shifts
        .into_iter()
        .filter(|s| (s.1 - mean) / sd > z)
        .map(|s| s.0)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corrnet::pearson;

    fn pair(xs: Vec<f64>, ys: Vec<f64>) -> AlignedPair {
        let d0 = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        AlignedPair {
            a: "A".into(),
            b: "B".into(),
            dates: (0..xs.len())
                .map(|k| d0 + chrono::Days::new(k as u64))
                .collect(),
            xs,
            ys,
        }
    }

    fn wave(n: usize, phase: f64) -> Vec<f64> {
        (0..n)
            .map(|k| ((k as f64) * 0.7 + phase).sin() * 0.03)
            .collect()
    }

    #[test]
    fn index_examples() {
        assert_eq!(index_to_cell(0, 4).unwrap(), (3, 0));
        assert_eq!(index_to_cell(6, 4).unwrap(), (0, 3));
        assert_eq!(cell_to_index(3, 0, 4).unwrap(), 0);
        assert_eq!(cell_to_index(0, 3, 4).unwrap(), 6);
        assert!(matches!(
            index_to_cell(10, 4),
            Err(PrismError::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            cell_to_index(0, 0, 4),
            Err(PrismError::InvalidCell { .. })
        ));
        assert!(matches!(
            cell_to_index(4, 1, 4),
            Err(PrismError::InvalidCell { .. })
        ));
    }

    #[test]
    fn identical_series_all_ones() {
        let xs = wave(40, 0.0);
        let tri = build_triangle(&pair(xs.clone(), xs), 5).unwrap();
        assert_eq!(tri.values.len(), cell_count(40));
        for (i, v) in tri.values.iter().enumerate() {
            let (_, y) = index_to_cell(i, 40).unwrap();
            if tri.window(y) >= 5 {
                assert!((v - 1.0).abs() < 1e-12, "cell {i}: {v}");
            } else {
                assert!(v.is_nan());
            }
        }
    }

    #[test]
    fn tip_is_full_series_pearson() {
        let (xs, ys) = (wave(60, 0.0), wave(60, 1.3));
        let tri = build_triangle(&pair(xs.clone(), ys.clone()), 5).unwrap();
        let full = pearson(&xs, &ys).unwrap().unwrap();
        assert!((tri.full_correlation() - full).abs() < 1e-8);
        assert_eq!(tri.get(59, 0).unwrap(), tri.full_correlation());
    }

    #[test]
    fn constant_window_is_nan() {
        let mut xs = wave(50, 0.0);
        for v in &mut xs[10..20] {
            *v = 0.0;
        }
        let m = PrefixMoments::new(&xs, &wave(50, 2.0));
        assert!(interval_pearson(&m, 10, 19, 5).is_nan());
        assert!(interval_pearson(&m, 9, 19, 5).is_finite());
    }

    #[test]
    fn last_row_nan_with_min_window() {
        let tri = build_triangle(&pair(wave(10, 0.0), wave(10, 1.0)), 2).unwrap();
        for x in 0..10 {
            assert!(tri.get(x, 9).unwrap().is_nan());
        }
        assert!(matches!(
            build_triangle(&pair(wave(3, 0.0), wave(3, 1.0)), 5),
            Err(PrismError::SeriesTooShort {
                n: 3,
                min_window: 5
            })
        ));
    }

    #[test]
    fn binary_and_csv_exports() {
        let tri = build_triangle(&pair(wave(8, 0.0), wave(8, 0.5)), 3).unwrap();
        let mut bin = Vec::new();
        tri.write_binary(&mut bin).unwrap();
        let back = PrismTriangle::read_binary(&bin[..]).unwrap();
        assert_eq!(back.dates, tri.dates);
        assert_eq!(back.n, 8);
        for (a, b) in back.values.iter().zip(&tri.values) {
            assert!(a.is_nan() && b.is_nan() || (a - b).abs() < 1e-6);
        }
        let mut csv = Vec::new();
        tri.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "i,x,y,window,end_date,corr");
        assert_eq!(lines.len(), 1 + cell_count(8));
        assert!(lines[1].starts_with("0,7,0,8,2020-01-08,"));
        assert!(lines.last().unwrap().ends_with(','));
    }

    #[test]
    fn industry_average_is_daywise_mean() {
        let d0 = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let mk = |t: &str, v: Vec<f64>| ReturnSeries {
            instrument: InstrumentId::new(t).unwrap(),
            dates: (0..v.len())
                .map(|k| d0 + chrono::Days::new(k as u64))
                .collect(),
            volume_changes: v.clone(),
            price_returns: v,
        };
        let a = mk("A", vec![0.1, 0.2, f64::NAN]);
        let b = mk("B", vec![0.3, 0.0, 0.5]);
        let avg = industry_average("ind", &[&a, &b]);
        assert_eq!(avg.price_returns.len(), 3);
        assert!((avg.price_returns[0] - 0.2).abs() < 1e-15);
        assert!((avg.price_returns[1] - 0.1).abs() < 1e-15);
        assert_eq!(avg.price_returns[2], 0.5);
    }

    #[test]
    fn shock_flagging_finds_jump() {
        let n = 120;
        let xs = wave(n, 0.0);
        let mut ys = wave(n, 0.4);
        ys[80] = 0.5;
        let tri = build_triangle(&pair(xs, ys), 5).unwrap();
        let flagged = flag_column_shifts(&tri, 3.0);
        assert!(flagged.contains(&80), "{flagged:?}");
    }

    #[test]
    fn year_dates_are_kept() {
        let tri = build_triangle(&pair(wave(6, 0.0), wave(6, 0.2)), 3).unwrap();
        assert_eq!(tri.start_date().unwrap().year(), 2020);
        assert_eq!(
            tri.end_date().unwrap(),
            NaiveDate::from_ymd_opt(2020, 1, 6).unwrap()
        );
    }
}
