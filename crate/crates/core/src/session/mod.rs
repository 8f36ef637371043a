//! Interactive cluster sessions.
//!
//! A session is an append-only log of events; the working cluster (members
//! with provenance, pinned knowledge items, manual ordering) is whatever the
//! log replays to. Derived views (the seriated correlation matrix, the UpSet
//! table, period returns) are computed on read and never persisted.

pub mod linkage;

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corrnet::{self, communities, ThresholdConfig, YearlyCorrelationCache};
use crate::ingest::InstrumentId;
use crate::knowledge::{KnowledgeItem, MultiLayerNetwork};
use crate::store::Store;

/// Most first-phase blocks tried when cutting the price dendrogram.
pub const MAX_BLOCKS: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum SessionError {
    #[error("unknown instrument {0}")]
    UnknownInstrument(InstrumentId),
    #[error("no correlation data for year {0}")]
    EmptyYear(i32),
    #[error("{0} is already a member")]
    DuplicateMember(InstrumentId),
    #[error("{0} is not a member")]
    NotAMember(InstrumentId),
    #[error("{0} is a must-have member; pass force to remove it")]
    MustHaveProtected(InstrumentId),
    #[error("unknown knowledge item {0}")]
    UnknownItem(String),
    #[error("item {0} is already pinned")]
    DuplicateItem(String),
    #[error("item {0} is not pinned")]
    NotPinned(String),
    #[error("order must list every member exactly once")]
    InvalidOrder,
    #[error("need at least two members, have {0}")]
    TooFewMembers(usize),
    #[error("first event must create the session")]
    MissingCreate,
    #[error("event {0} conflicts with an earlier event of the same id")]
    ConflictingEvent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    DataDriven,
    KnowledgeAdded,
    MustHave,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Member {
    pub instrument: InstrumentId,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub from: NaiveDate,
    pub to: NaiveDate,
}

impl DateRange {
    pub fn year(year: i32) -> Self {
        Self {
            from: NaiveDate::from_ymd_opt(year, 1, 1).expect("valid year"),
            to: NaiveDate::from_ymd_opt(year, 12, 31).expect("valid year"),
        }
    }
}

/// One mutation. `Create` is always the first event of a log and records
/// the resolved initial membership so replay needs no correlation data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", content = "args", rename_all = "snake_case")]
pub enum SessionOp {
    Create {
        seeds: Vec<InstrumentId>,
        config: ThresholdConfig,
        members: Vec<Member>,
    },
    Add {
        stock: InstrumentId,
        #[serde(default = "default_added")]
        provenance: Provenance,
    },
    Remove {
        stock: InstrumentId,
        #[serde(default)]
        force: bool,
    },
    Pin {
        item: KnowledgeItem,
    },
    Unpin {
        item: KnowledgeItem,
    },
    Reorder {
        order: Vec<InstrumentId>,
    },
}

fn default_added() -> Provenance {
    Provenance::KnowledgeAdded
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    /// Client-supplied idempotency key.
    pub id: String,
    pub ts: DateTime<Utc>,
    #[serde(flatten)]
    pub op: SessionOp,
}

/// Persisted form: the event log plus the fixed session parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionDocument {
    pub id: String,
    pub year: i32,
    pub range: DateRange,
    pub events: Vec<SessionEvent>,
}

/// Lookups used to validate new events. Replay skips validation.
pub trait Catalog {
    fn has_stock(&self, id: &InstrumentId) -> bool;
    fn has_item(&self, item: &KnowledgeItem) -> bool;
}

/// Accepts everything; used for replay.
pub struct Permissive;

impl Catalog for Permissive {
    fn has_stock(&self, _: &InstrumentId) -> bool {
        true
    }

    fn has_item(&self, _: &KnowledgeItem) -> bool {
        true
    }
}

/// Validates against a store and knowledge network.
pub struct StoreCatalog<'a> {
    pub store: &'a Store,
    pub network: &'a MultiLayerNetwork,
}

impl Catalog for StoreCatalog<'_> {
    fn has_stock(&self, id: &InstrumentId) -> bool {
        self.store.series.contains_key(id)
    }

    fn has_item(&self, item: &KnowledgeItem) -> bool {
        self.network.has_item(item)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Applied {
    Applied,
    /// The event id was already in the log; nothing changed.
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterSession {
    pub id: String,
    pub year: i32,
    pub range: DateRange,
    pub members: Vec<Member>,
    pub pinned_items: Vec<KnowledgeItem>,
    pub manual_order: Option<Vec<InstrumentId>>,
    pub created: DateTime<Utc>,
    pub modified: DateTime<Utc>,
    #[serde(skip)]
    events: Vec<SessionEvent>,
}

/// Initial membership: every community containing a seed, with seeds
/// forced into the graph as must-have.
pub fn initial_members(
    cache: &YearlyCorrelationCache,
    cfg: &ThresholdConfig,
    seeds: &[InstrumentId],
    max_size: usize,
    industries: &BTreeMap<InstrumentId, String>,
) -> Result<(ThresholdConfig, Vec<Member>), SessionError> {
    if cache.is_empty() {
        return Err(SessionError::EmptyYear(cache.year));
    }
    for s in seeds {
        if cache.position(s).is_none() {
            return Err(SessionError::UnknownInstrument(s.clone()));
        }
    }
    let mut cfg = cfg.clone();
    cfg.must_have.extend(seeds.iter().cloned());
    // community selection must not depend on the tag filter
    let mut unfiltered = cfg.clone();
    unfiltered.industry_tags.clear();
    let comms = communities(cache, &unfiltered, max_size, industries);
    let seed_set: BTreeSet<&InstrumentId> = seeds.iter().collect();
    let mut members: Vec<Member> = Vec::new();
    let mut seen = BTreeSet::new();
    for seed in seeds {
        let Some(comm) = comms.iter().find(|c| c.members.contains(seed)) else {
            continue;
        };
        for m in &comm.members {
            if seen.insert(m.clone()) {
                members.push(Member {
                    instrument: m.clone(),
                    provenance: if seed_set.contains(m) {
                        Provenance::MustHave
                    } else {
                        Provenance::DataDriven
                    },
                });
            }
        }
    }
    Ok((cfg, members))
}

impl ClusterSession {
    /// Start a session from seed stocks in a year's cache.
    #[allow(clippy::too_many_arguments)]
    pub fn create(
        id: impl Into<String>,
        event_id: impl Into<String>,
        ts: DateTime<Utc>,
        cache: &YearlyCorrelationCache,
        cfg: &ThresholdConfig,
        seeds: &[InstrumentId],
        max_size: usize,
        industries: &BTreeMap<InstrumentId, String>,
    ) -> Result<Self, SessionError> {
        let (config, members) = initial_members(cache, cfg, seeds, max_size, industries)?;
        let doc = SessionDocument {
            id: id.into(),
            year: cache.year,
            range: DateRange::year(cache.year),
            events: vec![SessionEvent {
                id: event_id.into(),
                ts,
                op: SessionOp::Create {
                    seeds: seeds.to_vec(),
                    config,
                    members,
                },
            }],
        };
        Self::replay(&doc)
    }

    /// Rebuild a session from its log.
    pub fn replay(doc: &SessionDocument) -> Result<Self, SessionError> {
        let (first, rest) = doc
            .events
            .split_first()
            .ok_or(SessionError::MissingCreate)?;
        let SessionOp::Create { members, .. } = &first.op else {
            return Err(SessionError::MissingCreate);
        };
        let mut session = Self {
            id: doc.id.clone(),
            year: doc.year,
            range: doc.range,
            members: members.clone(),
            pinned_items: Vec::new(),
            manual_order: None,
            created: first.ts,
            modified: first.ts,
            events: vec![first.clone()],
        };
        for event in rest {
            session.apply(event.clone(), &Permissive)?;
        }
        Ok(session)
    }

    pub fn document(&self) -> SessionDocument {
        SessionDocument {
            id: self.id.clone(),
            year: self.year,
            range: self.range,
            events: self.events.clone(),
        }
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn member_ids(&self) -> Vec<InstrumentId> {
        self.members.iter().map(|m| m.instrument.clone()).collect()
    }

    pub fn provenance(&self, stock: &InstrumentId) -> Option<Provenance> {
        self.members
            .iter()
            .find(|m| &m.instrument == stock)
            .map(|m| m.provenance)
    }

    fn position(&self, stock: &InstrumentId) -> Option<usize> {
        self.members.iter().position(|m| &m.instrument == stock)
    }

    /// Validate and apply one event. Events whose id is already logged are
    /// acknowledged without effect; a rejected event leaves the session
    /// untouched and is not logged.
    pub fn apply(
        &mut self,
        event: SessionEvent,
        catalog: &dyn Catalog,
    ) -> Result<Applied, SessionError> {
        if let Some(prior) = self.events.iter().find(|e| e.id == event.id) {
            return if prior.op == event.op {
                Ok(Applied::Duplicate)
            } else {
                Err(SessionError::ConflictingEvent(event.id))
            };
        }
        match &event.op {
            SessionOp::Create { .. } => return Err(SessionError::ConflictingEvent(event.id)),
            SessionOp::Add { stock, provenance } => {
                if self.position(stock).is_some() {
                    return Err(SessionError::DuplicateMember(stock.clone()));
                }
                if !catalog.has_stock(stock) {
                    return Err(SessionError::UnknownInstrument(stock.clone()));
                }
                self.members.push(Member {
                    instrument: stock.clone(),
                    provenance: *provenance,
                });
                if let Some(order) = &mut self.manual_order {
                    order.push(stock.clone());
                }
            }
            SessionOp::Remove { stock, force } => {
                let pos = self
                    .position(stock)
                    .ok_or_else(|| SessionError::NotAMember(stock.clone()))?;
                if self.members[pos].provenance == Provenance::MustHave && !force {
                    return Err(SessionError::MustHaveProtected(stock.clone()));
                }
                self.members.remove(pos);
                if let Some(order) = &mut self.manual_order {
                    order.retain(|s| s != stock);
                }
            }
            SessionOp::Pin { item } => {
                if self.pinned_items.contains(item) {
                    return Err(SessionError::DuplicateItem(item.to_string()));
                }
                if !catalog.has_item(item) {
                    return Err(SessionError::UnknownItem(item.to_string()));
                }
                self.pinned_items.push(item.clone());
            }
            SessionOp::Unpin { item } => {
                let pos = self
                    .pinned_items
                    .iter()
                    .position(|p| p == item)
                    .ok_or_else(|| SessionError::NotPinned(item.to_string()))?;
                self.pinned_items.remove(pos);
            }
            SessionOp::Reorder { order } => {
                let want: BTreeSet<&InstrumentId> =
                    self.members.iter().map(|m| &m.instrument).collect();
                let got: BTreeSet<&InstrumentId> = order.iter().collect();
                if order.len() != self.members.len() || want != got {
                    return Err(SessionError::InvalidOrder);
                }
                self.manual_order = Some(order.clone());
            }
        }
        self.modified = event.ts;
        self.events.push(event);
        Ok(Applied::Applied)
    }

    /// Members × pinned items incidence.
    pub fn upset_table(&self, network: &MultiLayerNetwork) -> UpsetTable {
        UpsetTable {
            items: self.pinned_items.clone(),
            members: self.member_ids(),
            membership: self
                .members
                .iter()
                .map(|m| {
                    self.pinned_items
                        .iter()
                        .map(|item| network.holds(&m.instrument, item))
                        .collect()
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpsetTable {
    pub items: Vec<KnowledgeItem>,
    pub members: Vec<InstrumentId>,
    /// `membership[m][k]`: member `m` holds item `k`.
    pub membership: Vec<Vec<bool>>,
}

/// `close_end / close_start - 1` over the first and last bars inside the
/// range; `NaN` when a member has no bars there.
pub fn period_returns(
    members: &[InstrumentId],
    store: &Store,
    range: DateRange,
) -> BTreeMap<InstrumentId, f64> {
    members
        .iter()
        .map(|id| {
            let r = store
                .series
                .get(id)
                .map(|s| s.range(range.from, range.to))
                .and_then(|bars| Some(bars.last()?.close / bars.first()?.close - 1.0))
                .unwrap_or(f64::NAN);
            (id.clone(), r)
        })
        .collect()
}

/// Seriated correlation matrix of a session's members.
///
/// Rows/columns follow `members` (display order). Above the diagonal are
/// price correlations, below it volume correlations, on it each member's
/// price correlation with the benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderedMatrix {
    pub members: Vec<InstrumentId>,
    /// `permutation[r]` is the session member index shown at row `r`.
    pub permutation: Vec<usize>,
    /// Row-major strict upper triangle in display order.
    pub price_upper: Vec<Option<f64>>,
    /// Row-major strict lower triangle in display order.
    pub volume_lower: Vec<Option<f64>>,
    pub market_diag: Vec<Option<f64>>,
    pub returns: Vec<Option<f64>>,
    /// Half-open display-row ranges of the first-phase blocks.
    pub blocks: Vec<(usize, usize)>,
}

impl OrderedMatrix {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Display cell `(r, c)`.
    pub fn cell(&self, r: usize, c: usize) -> Option<f64> {
        let m = self.len();
        match r.cmp(&c) {
            std::cmp::Ordering::Less => self.price_upper[corrnet::cache::pair_index(r, c, m)],
            std::cmp::Ordering::Greater => self.volume_lower[r * (r - 1) / 2 + c],
            std::cmp::Ordering::Equal => self.market_diag[r],
        }
    }
}

/// Pairwise correlations of a member set over a date range.
#[derive(Debug, Clone)]
pub struct RangeCorrelations {
    pub price: Vec<Option<f64>>,
    pub volume: Vec<Option<f64>>,
    pub market: Vec<Option<f64>>,
    pub total_volume: Vec<f64>,
    m: usize,
}

impl RangeCorrelations {
    pub fn compute(members: &[InstrumentId], store: &Store, range: DateRange) -> Self {
        let m = members.len();
        let columns: Vec<Option<crate::ingest::ReturnSeries>> = members
            .iter()
            .map(|id| {
                store
                    .observations(id)
                    .map(|o| o.slice_dates(range.from, range.to))
            })
            .collect();
        let mut axis: Vec<NaiveDate> = columns
            .iter()
            .flatten()
            .flat_map(|c| c.dates.clone())
            .collect();
        axis.sort_unstable();
        axis.dedup();
        let slot: BTreeMap<NaiveDate, usize> =
            axis.iter().enumerate().map(|(k, d)| (*d, k)).collect();
        let dense = |c: &Option<crate::ingest::ReturnSeries>, price: bool| {
            let mut out = vec![f64::NAN; axis.len()];
            if let Some(c) = c {
                let values = if price {
                    &c.price_returns
                } else {
                    &c.volume_changes
                };
                for (d, v) in c.dates.iter().zip(values) {
                    out[slot[d]] = *v;
                }
            }
            out
        };
        let prices: Vec<Vec<f64>> = columns.iter().map(|c| dense(c, true)).collect();
        let volumes: Vec<Vec<f64>> = columns.iter().map(|c| dense(c, false)).collect();
        let corr = |x: &[f64], y: &[f64]| corrnet::pearson(x, y).ok().flatten();
        let mut price = Vec::with_capacity(corrnet::cache::pair_count(m));
        let mut volume = Vec::with_capacity(corrnet::cache::pair_count(m));
        for i in 0..m {
            for j in i + 1..m {
                price.push(corr(&prices[i], &prices[j]));
                volume.push(corr(&volumes[i], &volumes[j]));
            }
        }
        let benchmark = store
            .config
            .benchmark
            .as_ref()
            .and_then(|b| store.observations(b));
        let market = match benchmark {
            Some(b) => {
                let b = dense(&Some(b.slice_dates(range.from, range.to)), true);
                prices.iter().map(|p| corr(p, &b)).collect()
            }
            None => vec![None; m],
        };
        let total_volume = members
            .iter()
            .map(|id| {
                store
                    .series
                    .get(id)
                    .map(|s| s.range(range.from, range.to).iter().map(|b| b.volume).sum())
                    .unwrap_or(0.0)
            })
            .collect();
        Self {
            price,
            volume,
            market,
            total_volume,
            m,
        }
    }

    pub fn price(&self, i: usize, j: usize) -> Option<f64> {
        self.pair(&self.price, i, j)
    }

    pub fn volume(&self, i: usize, j: usize) -> Option<f64> {
        self.pair(&self.volume, i, j)
    }

    fn pair(&self, values: &[Option<f64>], i: usize, j: usize) -> Option<f64> {
        if i == j {
            return Some(1.0);
        }
        values[corrnet::cache::pair_index(i.min(j), i.max(j), self.m)]
    }

    /// `1 - r` dissimilarities over `idx`; undefined correlations count as 0.
    fn dissimilarity(&self, idx: &[usize], volume: bool) -> Vec<f64> {
        let k = idx.len();
        let mut d = vec![0.0; k * k];
        for a in 0..k {
            for b in 0..k {
                if a != b {
                    let r = if volume {
                        self.volume(idx[a], idx[b])
                    } else {
                        self.price(idx[a], idx[b])
                    };
                    d[a * k + b] = 1.0 - r.unwrap_or(0.0);
                }
            }
        }
        d
    }
}

/// First phase: price-correlation blocks. Returns member-index groups,
/// largest first.
pub fn price_blocks(corr: &RangeCorrelations, m: usize) -> Vec<Vec<usize>> {
    let all: Vec<usize> = (0..m).collect();
    if m < 3 {
        return vec![all];
    }
    let dist = corr.dissimilarity(&all, false);
    let merges = linkage::average_linkage(&dist, m);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for k in 2..=MAX_BLOCKS.min(m - 1) {
        let labels = linkage::cut(&merges, m, k);
        let score = linkage::silhouette(&dist, m, &labels);
        // strict improvement only, so fewer blocks win ties
        if best.as_ref().is_none_or(|(s, _)| score > *s + 1e-12) {
            best = Some((score, labels));
        }
    }
    let labels = best.map(|b| b.1).unwrap_or_else(|| vec![0; m]);
    let k = labels.iter().copied().max().map_or(0, |x| x + 1);
    let mut blocks: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        blocks[l].push(i);
    }
    blocks.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    blocks
}

/// Second phase: order a block's members by volume-correlation linkage,
/// heavier-traded subtrees first.
pub fn seriate_block(corr: &RangeCorrelations, block: &[usize]) -> Vec<usize> {
    if block.len() < 2 {
        return block.to_vec();
    }
    let dist = corr.dissimilarity(block, true);
    let merges = linkage::average_linkage(&dist, block.len());
    let weights: Vec<f64> = block.iter().map(|&i| corr.total_volume[i]).collect();
    linkage::leaf_order(&merges, block.len(), &weights)
        .into_iter()
        .map(|k| block[k])
        .collect()
}

/// Two-phase seriated matrix for the session over `range`.
pub fn ordered_matrix(
    session: &ClusterSession,
    store: &Store,
    range: DateRange,
) -> Result<OrderedMatrix, SessionError> {
    let ids = session.member_ids();
    let m = ids.len();
    if m < 2 {
        return Err(SessionError::TooFewMembers(m));
    }
    let corr = RangeCorrelations::compute(&ids, store, range);
    let blocks = price_blocks(&corr, m);

    let (permutation, spans) = match &session.manual_order {
        Some(order) => {
            let perm: Vec<usize> = order
                .iter()
                .filter_map(|s| ids.iter().position(|x| x == s))
                .collect();
            let mut label = vec![0; m];
            for (b, block) in blocks.iter().enumerate() {
                for &i in block {
                    label[i] = b;
                }
            }
            let mut spans = Vec::new();
            let mut start = 0;
            for r in 1..=perm.len() {
                if r == perm.len() || label[perm[r]] != label[perm[start]] {
                    spans.push((start, r));
                    start = r;
                }
            }
            (perm, spans)
        }
        None => {
            let mut perm = Vec::with_capacity(m);
            let mut spans = Vec::with_capacity(blocks.len());
            for block in &blocks {
                let start = perm.len();
                perm.extend(seriate_block(&corr, block));
                spans.push((start, perm.len()));
            }
            (perm, spans)
        }
    };

    let mut price_upper = Vec::with_capacity(corrnet::cache::pair_count(m));
    for r in 0..m {
        for c in r + 1..m {
            price_upper.push(corr.price(permutation[r], permutation[c]));
        }
    }
    let mut volume_lower = Vec::with_capacity(corrnet::cache::pair_count(m));
    for r in 0..m {
        for c in 0..r {
            volume_lower.push(corr.volume(permutation[r], permutation[c]));
        }
    }
    let returns = period_returns(&ids, store, range);
    let finite = |v: f64| v.is_finite().then_some(v);
    Ok(OrderedMatrix {
        members: permutation.iter().map(|&i| ids[i].clone()).collect(),
        market_diag: permutation.iter().map(|&i| corr.market[i]).collect(),
        returns: permutation
            .iter()
            .map(|&i| finite(returns[&ids[i]]))
            .collect(),
        permutation,
        price_upper,
        volume_lower,
        blocks: spans,
    })
}
