//! Seeded synthetic market with planted communities.
//!
//! Each stock's daily log return mixes a market factor, its community's
//! latent factor and idiosyncratic noise, all unit-variance before scaling,
//! so the expected within-community correlation is
//! `market_loading² + community_loading²` and across communities
//! `market_loading²`. Volumes follow the same structure on log-volume
//! innovations. Knowledge items are drawn so every item of a stock agrees
//! with its community with probability `agreement`.

use std::collections::BTreeSet;
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ingest::{self, CompanyProfile, DailyBar, DailySeries, InstrumentId, PersonIdentity};
use crate::knowledge::Layer;
use crate::mvclust::ViewFeatures;
use crate::store::{StoreError, META_FILE, PRICES_FILE};

pub const TRUTH_FILE: &str = "truth.json";
pub const BENCHMARK_TICKER: &str = "000300.IDX";

const PROVINCES: &[&str] = &[
    "Guangdong",
    "Zhejiang",
    "Jiangsu",
    "Shandong",
    "Hubei",
    "Sichuan",
    "Fujian",
    "Hunan",
    "Henan",
    "Anhui",
    "Liaoning",
    "Shaanxi",
];
const INDUSTRIES: &[&str] = &[
    "medical devices",
    "semiconductors",
    "banking",
    "real estate",
    "liquor",
    "automobiles",
    "steel",
    "software",
    "pharmaceuticals",
    "media",
    "chemicals",
    "coal",
];
const CONCEPTS: &[&str] = &[
    "mask",
    "5G",
    "new energy",
    "big data",
    "cloud computing",
    "vaccine",
    "lithium battery",
    "blockchain",
    "rare earth",
    "photovoltaic",
    "smart city",
    "gaming",
];
const SURNAMES: &[&str] = &[
    "Wang", "Li", "Zhang", "Liu", "Chen", "Yang", "Zhao", "Huang", "Zhou", "Wu",
];
const GIVEN: &[&str] = &[
    "Wei", "Fang", "Min", "Jing", "Lei", "Yan", "Jun", "Tao", "Hua", "Ping",
];
/// Name shared by one manager in every community, told apart by birth year.
const NAMESAKE: &str = "Li Wei";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub stocks: usize,
    pub years: usize,
    pub communities: usize,
    pub seed: u64,
    pub start_year: i32,
    pub market_loading: f64,
    pub community_loading: f64,
    pub agreement: f64,
    /// Explicit community sizes; leftover stocks get no community.
    /// When `None`, stocks are spread evenly over `communities`.
    pub community_sizes: Option<Vec<usize>>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            stocks: 300,
            years: 2,
            communities: 10,
            seed: 42,
            start_year: 2010,
            market_loading: 0.3,
            community_loading: 0.7,
            agreement: 0.8,
            community_sizes: None,
        }
    }
}

/// Planted labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub config: SynthConfig,
    pub benchmark: InstrumentId,
    /// Members of each planted community, in ticker order.
    pub communities: Vec<Vec<InstrumentId>>,
    /// Community of each stock (ticker order), `None` for background stocks.
    pub labels: Vec<Option<usize>>,
    pub tickers: Vec<InstrumentId>,
}

impl SynthTruth {
    pub fn community_of(&self, stock: &InstrumentId) -> Option<&[InstrumentId]> {
        let k = self.tickers.iter().position(|t| t == stock)?;
        self.labels[k].map(|c| self.communities[c].as_slice())
    }
}

#[derive(Debug, Clone)]
pub struct SynthMarket {
    /// Stocks then the benchmark.
    pub series: Vec<DailySeries>,
    pub profiles: Vec<CompanyProfile>,
    pub truth: SynthTruth,
}

/// Weekdays of `years` calendar years from January 1st of `start_year`.
pub fn trading_days(start_year: i32, years: usize) -> Vec<NaiveDate> {
    let start = NaiveDate::from_ymd_opt(start_year, 1, 1).expect("valid start year");
    let end_year = start_year + years as i32;
    start
        .iter_days()
        .take_while(|d| d.year() < end_year)
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .collect()
}

fn ticker(k: usize) -> InstrumentId {
    InstrumentId::new(format!("{:06}.SH", 600000 + k)).expect("non-empty")
}

fn cycled(list: &[&str], k: usize) -> String {
    let round = k / list.len();
    if round == 0 {
        list[k].to_string()
    } else {
        format!("{} {}", list[k % list.len()], round + 1)
    }
}

/// Knowledge vocabulary owned by one community.
struct Vocabulary {
    province: String,
    city: String,
    industry: String,
    concept: String,
    managers: Vec<(String, i32)>,
    /// Institutions, keyed by founding year like people by birth year.
    investors: Vec<(String, i32)>,
}

fn vocabulary(c: usize) -> Vocabulary {
    let province = cycled(PROVINCES, c);
    let person = |slot: usize| {
        let k = c * 7 + slot;
        format!(
            "{} {}",
            SURNAMES[k % SURNAMES.len()],
            GIVEN[(k / SURNAMES.len() + slot) % GIVEN.len()]
        )
    };
    Vocabulary {
        city: format!("{province} City"),
        province,
        industry: cycled(INDUSTRIES, c),
        concept: cycled(CONCEPTS, c),
        managers: vec![
            (NAMESAKE.to_string(), 1960 + c as i32),
            (person(1), 1965 + (c % 20) as i32),
            (person(2), 1970 + (c % 20) as i32),
        ],
        investors: (0..3)
            .map(|i| {
                (
                    format!("{} Capital {}", cycled(PROVINCES, c), i + 1),
                    1990 + i,
                )
            })
            .collect(),
    }
}

fn community_sizes(cfg: &SynthConfig) -> Vec<usize> {
    match &cfg.community_sizes {
        Some(sizes) => sizes.clone(),
        None if cfg.communities == 0 => Vec::new(),
        None => {
            let base = cfg.stocks / cfg.communities;
            let extra = cfg.stocks % cfg.communities;
            (0..cfg.communities)
                .map(|c| base + usize::from(c < extra))
                .collect()
        }
    }
}

pub fn generate(cfg: &SynthConfig) -> SynthMarket {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let days = trading_days(cfg.start_year, cfg.years);
    let sizes = community_sizes(cfg);
    assert!(
        sizes.iter().sum::<usize>() <= cfg.stocks,
        "community sizes exceed stock count"
    );

    // contiguous label runs, then shuffled so tickers don't reveal structure
    let mut labels: Vec<Option<usize>> = sizes
        .iter()
        .enumerate()
        .flat_map(|(c, &s)| std::iter::repeat_n(Some(c), s))
        .collect();
    labels.resize(cfg.stocks, None);
    rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut rng);

    let k = sizes.len();
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    let market: Vec<f64> = days.iter().map(|_| normal(&mut rng)).collect();
    let market_vol: Vec<f64> = days.iter().map(|_| normal(&mut rng)).collect();
    let factors: Vec<Vec<f64>> = (0..k)
        .map(|_| days.iter().map(|_| normal(&mut rng)).collect())
        .collect();
    let vol_factors: Vec<Vec<f64>> = (0..k)
        .map(|_| days.iter().map(|_| normal(&mut rng)).collect())
        .collect();

    let (a, b) = (cfg.market_loading, cfg.community_loading);
    let noise_clustered = (1.0 - a * a - b * b).max(0.0).sqrt();
    let noise_background = (1.0 - a * a).max(0.0).sqrt();

    let mut series = Vec::with_capacity(cfg.stocks + 1);
    let tickers: Vec<InstrumentId> = (0..cfg.stocks).map(ticker).collect();
    for (s, id) in tickers.iter().enumerate() {
        let sigma = 0.01 + 0.02 * rng.random::<f64>();
        let mut close = 5.0 + 95.0 * rng.random::<f64>();
        let mean_log_vol = (1e5f64).ln() + 4.0 * rng.random::<f64>();
        let mut log_vol = mean_log_vol;
        let mut bars = Vec::with_capacity(days.len());
        for (t, &date) in days.iter().enumerate() {
            let (shock, vshock) = match labels[s] {
                Some(c) => (
                    a * market[t] + b * factors[c][t] + noise_clustered * normal(&mut rng),
                    a * market_vol[t] + b * vol_factors[c][t] + noise_clustered * normal(&mut rng),
                ),
                None => (
                    a * market[t] + noise_background * normal(&mut rng),
                    a * market_vol[t] + noise_background * normal(&mut rng),
                ),
            };
            if t > 0 {
                close *= (sigma * shock).exp();
                log_vol += 0.3 * vshock;
                log_vol += 0.05 * (mean_log_vol - log_vol);
            }
            bars.push(DailyBar {
                date,
                close: round_to(close, 4),
                volume: log_vol.exp().round(),
            });
        }
        series.push(DailySeries {
            instrument: id.clone(),
            bars,
        });
    }

    let benchmark = InstrumentId::new(BENCHMARK_TICKER).expect("non-empty");
    let mut level = 3000.0;
    let mut bench_bars = Vec::with_capacity(days.len());
    for (t, &date) in days.iter().enumerate() {
        if t > 0 {
            level *= (0.012 * market[t]).exp();
        }
        let volume = series.iter().map(|s| s.bars[t].volume).sum();
        bench_bars.push(DailyBar {
            date,
            close: round_to(level, 4),
            volume,
        });
    }
    series.push(DailySeries {
        instrument: benchmark.clone(),
        bars: bench_bars,
    });

    let vocab: Vec<Vocabulary> = (0..k.max(1)).map(vocabulary).collect();
    let profiles = tickers
        .iter()
        .zip(&labels)
        .map(|(id, label)| profile(id, *label, &vocab, cfg.agreement, &mut rng))
        .collect();

    let communities = (0..k)
        .map(|c| {
            tickers
                .iter()
                .zip(&labels)
                .filter(|(_, l)| **l == Some(c))
                .map(|(t, _)| t.clone())
                .collect()
        })
        .collect();

    SynthMarket {
        series,
        profiles,
        truth: SynthTruth {
            config: cfg.clone(),
            benchmark,
            communities,
            labels,
            tickers,
        },
    }
}

fn round_to(x: f64, digits: i32) -> f64 {
    let p = 10f64.powi(digits);
    (x * p).round() / p
}

/// Home community with probability `agreement`, otherwise a random other one.
fn pick(home: Option<usize>, k: usize, agreement: f64, rng: &mut ChaCha8Rng) -> usize {
    match home {
        Some(h) if k < 2 || rng.random::<f64>() < agreement => h,
        Some(h) => {
            let other = rng.random_range(0..k - 1);
            if other >= h {
                other + 1
            } else {
                other
            }
        }
        None => rng.random_range(0..k),
    }
}

fn profile(
    id: &InstrumentId,
    label: Option<usize>,
    vocab: &[Vocabulary],
    agreement: f64,
    rng: &mut ChaCha8Rng,
) -> CompanyProfile {
    let k = vocab.len();
    let location = &vocab[pick(label, k, agreement, rng)];
    let industry = &vocab[pick(label, k, agreement, rng)].industry;
    let mut concepts = BTreeSet::new();
    concepts.insert(vocab[pick(label, k, agreement, rng)].concept.clone());
    let mut managers = BTreeSet::new();
    let mut top_investors = BTreeSet::new();
    for slot in 0..3 {
        let (name, year) = &vocab[pick(label, k, agreement, rng)].managers[slot];
        managers.insert(PersonIdentity::new(name, Some(*year), id));
        let (name, year) = &vocab[pick(label, k, agreement, rng)].investors[slot];
        top_investors.insert(PersonIdentity::new(name, Some(*year), id));
    }
    CompanyProfile {
        instrument: id.clone(),
        province: location.province.clone(),
        city: location.city.clone(),
        industry: industry.clone(),
        concepts,
        managers,
        top_investors,
    }
}

/// Write `prices.csv`, `meta.json` and `truth.json` into `dir`.
pub fn write_market(market: &SynthMarket, dir: &Path) -> Result<(), StoreError> {
    fs::create_dir_all(dir).map_err(|e| crate::store::io_err(dir, e))?;
    let prices = dir.join(PRICES_FILE);
    ingest::write_prices(
        &market.series,
        BufWriter::new(crate::store::create(&prices)?),
    )?;
    let meta = dir.join(META_FILE);
    ingest::write_metadata(
        &market.profiles,
        BufWriter::new(crate::store::create(&meta)?),
    )?;
    let truth = dir.join(TRUTH_FILE);
    serde_json::to_writer_pretty(BufWriter::new(crate::store::create(&truth)?), &market.truth)
        .map_err(|e| StoreError::Format {
            path: truth.clone(),
            message: e.to_string(),
        })
}

pub fn read_truth(dir: &Path) -> Result<SynthTruth, StoreError> {
    let path = dir.join(TRUTH_FILE);
    serde_json::from_reader(crate::store::open(&path)?).map_err(|e| StoreError::Format {
        path,
        message: e.to_string(),
    })
}

/// Planted multi-view incidence data without any market attached.
///
/// Each of the `n` rows belongs to one of `c` clusters (balanced, shuffled).
/// Every view has `slots` categorical slots with `c` values each; a row takes
/// its own cluster's value with probability `agreement` and a uniformly
/// chosen other value otherwise. Returns the planted labels and one view per
/// layer in `layers`.
pub fn planted_views(
    n: usize,
    c: usize,
    layers: &[Layer],
    slots: usize,
    agreement: f64,
    seed: u64,
) -> (Vec<usize>, Vec<ViewFeatures>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..n).map(|i| i * c / n).collect();
    rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut rng);
    let views = layers
        .iter()
        .map(|&layer| {
            let rows = labels
                .iter()
                .map(|&l| {
                    (0..slots)
                        .map(|slot| slot * c + pick(Some(l), c, agreement, &mut rng))
                        .collect()
                })
                .collect();
            ViewFeatures::new(layer, slots * c, rows)
        })
        .collect();
    (labels, views)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            stocks: 40,
            years: 1,
            communities: 4,
            seed: 7,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn calendar_is_weekdays() {
        let days = trading_days(2020, 1);
        assert_eq!(days.len(), 262);
        assert!(days.iter().all(|d| d.year() == 2020));
    }

    #[test]
    fn same_seed_same_market() {
        let a = generate(&small());
        let b = generate(&small());
        assert_eq!(a.series, b.series);
        assert_eq!(a.profiles, b.profiles);
        let mut c = small();
        c.seed = 8;
        assert_ne!(generate(&c).series, a.series);
    }

    #[test]
    fn planted_sizes() {
        let mut cfg = small();
        cfg.community_sizes = Some(vec![19, 5]);
        let m = generate(&cfg);
        assert_eq!(m.truth.communities[0].len(), 19);
        assert_eq!(m.truth.communities[1].len(), 5);
        assert_eq!(m.truth.labels.iter().filter(|l| l.is_none()).count(), 16);
        assert_eq!(m.series.len(), 41);
    }

    #[test]
    fn full_agreement_gives_community_items() {
        let mut cfg = small();
        cfg.agreement = 1.0;
        let m = generate(&cfg);
        for members in &m.truth.communities {
            let provinces: BTreeSet<_> = members
                .iter()
                .map(|t| {
                    &m.profiles
                        .iter()
                        .find(|p| &p.instrument == t)
                        .unwrap()
                        .province
                })
                .collect();
            assert_eq!(provinces.len(), 1);
        }
    }
}
