//! HTTP API over correlation caches, communities, the knowledge network,
//! multi-view clusters, cluster sessions and correlation prisms.
//!
//! Every endpoint is a thin adapter: it parses the request, calls the
//! corresponding `prismatic_core` function and serializes the result.
//! Undefined correlations are sent as `null`.

pub mod error;
pub mod state;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use prismatic_core::corrnet::{self, Community, ThresholdConfig, DEFAULT_MAX_SIZE};
use prismatic_core::ingest::InstrumentId;
use prismatic_core::knowledge::{EgoResult, KnowledgeItem};
use prismatic_core::prism::{self, PrismTriangle, DEFAULT_MIN_WINDOW};
use prismatic_core::session::{
    self, Applied, ClusterSession, DateRange, SessionEvent, SessionOp, StoreCatalog,
};

pub use error::{ApiError, ErrorCode};
pub use state::AppState;

type ApiResult<T> = Result<Json<T>, ApiError>;
type Shared = State<Arc<AppState>>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/years", get(years))
        .route("/years/{year}/distribution", get(distribution))
        .route("/years/{year}/communities", get(communities))
        .route("/stocks/{id}/ego", get(ego))
        .route(
            "/knowledge/items/{layer}/{attr}/{value}/companies",
            get(item_companies),
        )
        .route("/clusters", get(clusters))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/log", get(session_log))
        .route("/sessions/{id}/ops", post(apply_op))
        .route("/sessions/{id}/matrix", get(matrix))
        .route("/sessions/{id}/upset", get(upset))
        .route("/sessions/{id}/returns", get(returns))
        .route("/prism", get(prism_pair))
        .route("/prism/refs", get(prism_refs))
        .with_state(state)
}

/// Bind and serve until the process is stopped.
pub async fn serve(state: Arc<AppState>, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    log_line(&format!("listening on {}", listener.local_addr()?));
    axum::serve(listener, router(state)).await
}

fn log_line(msg: &str) {
    eprintln!("{msg}");
}

fn query<T>(q: Result<Query<T>, QueryRejection>) -> Result<T, ApiError> {
    q.map(|Query(v)| v)
        .map_err(|e| ApiError::bad_request(e.body_text()))
}

fn body<T>(b: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    b.map(|Json(v)| v)
        .map_err(|e| ApiError::bad_request(e.body_text()))
}

fn instrument(s: &str) -> Result<InstrumentId, ApiError> {
    InstrumentId::new(s).map_err(|e| ApiError::bad_request(e.to_string()))
}

/// Comma-separated tickers; blanks ignored.
fn id_list(s: Option<&str>) -> Result<Vec<InstrumentId>, ApiError> {
    s.unwrap_or("")
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(instrument)
        .collect()
}

fn known(state: &AppState, id: &InstrumentId) -> Result<(), ApiError> {
    if state.store.series.contains_key(id) {
        Ok(())
    } else {
        Err(ApiError::new(
            ErrorCode::UnknownInstrument,
            format!("unknown instrument {id}"),
        ))
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct YearEntry {
    pub year: i32,
    pub instrument_count: usize,
}

async fn years(State(state): Shared) -> ApiResult<Vec<YearEntry>> {
    let out = state
        .years()
        .into_iter()
        .map(|year| {
            Ok(YearEntry {
                year,
                instrument_count: state.instrument_count(year)?,
            })
        })
        .collect::<Result<_, ApiError>>()?;
    Ok(Json(out))
}

#[derive(Debug, Deserialize)]
struct DistributionQuery {
    subjects: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DistributionResponse {
    pub year: i32,
    pub subjects: Vec<corrnet::CorrelationDistribution>,
    pub benchmark: Option<corrnet::CorrelationDistribution>,
}

async fn distribution(
    State(state): Shared,
    Path(year): Path<i32>,
    q: Result<Query<DistributionQuery>, QueryRejection>,
) -> ApiResult<DistributionResponse> {
    let q = query(q)?;
    let cache = state.cache(year)?;
    let subjects = id_list(q.subjects.as_deref())?
        .iter()
        .map(|s| corrnet::correlation_distribution(&cache, s))
        .collect::<Result<_, _>>()?;
    let benchmark = match &state.store.config.benchmark {
        Some(b) => Some(corrnet::correlation_distribution(&cache, b)?),
        None => None,
    };
    Ok(Json(DistributionResponse {
        year,
        subjects,
        benchmark,
    }))
}

#[derive(Debug, Deserialize)]
struct CommunityQuery {
    tau_s: Option<f64>,
    tau_p: Option<f64>,
    min_overlap: Option<u32>,
    must: Option<String>,
    tags: Option<String>,
    max_size: Option<usize>,
    /// Stocks whose knowledge clusters drive the member flags; defaults to
    /// the must-have list.
    selected: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommunityMember {
    pub instrument: InstrumentId,
    pub betweenness: f64,
    pub industry: Option<String>,
    /// `None` when no multi-view clustering is loaded.
    pub in_knowledge_cluster_of_selected: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommunityView {
    pub year: i32,
    pub size: usize,
    pub members: Vec<CommunityMember>,
}

/// Threshold configuration from query parameters, with the benchmark
/// always excluded from the graph.
fn threshold_config(state: &AppState, q: &CommunityQuery) -> Result<ThresholdConfig, ApiError> {
    let mut cfg = ThresholdConfig::default();
    cfg.tau_spearman = q.tau_s.unwrap_or(cfg.tau_spearman);
    cfg.tau_pearson = q.tau_p.unwrap_or(cfg.tau_pearson);
    cfg.min_overlap = q.min_overlap.unwrap_or(cfg.min_overlap);
    for m in id_list(q.must.as_deref())? {
        known(state, &m)?;
        cfg.must_have.insert(m);
    }
    cfg.industry_tags = q
        .tags
        .as_deref()
        .unwrap_or("")
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(String::from)
        .collect();
    cfg.exclude.extend(state.store.config.benchmark.clone());
    Ok(cfg)
}

async fn communities(
    State(state): Shared,
    Path(year): Path<i32>,
    q: Result<Query<CommunityQuery>, QueryRejection>,
) -> ApiResult<Vec<CommunityView>> {
    let q = query(q)?;
    let cache = state.cache(year)?;
    let cfg = threshold_config(&state, &q)?;
    let industries = state.store.industry_map();
    let found: Vec<Community> = corrnet::communities(
        &cache,
        &cfg,
        q.max_size.unwrap_or(DEFAULT_MAX_SIZE),
        &industries,
    );

    let selected = match q.selected.as_deref() {
        Some(s) => id_list(Some(s))?,
        None => cfg.must_have.iter().cloned().collect(),
    };
    let highlighted: Option<BTreeSet<InstrumentId>> = state.gmc.as_ref().map(|gmc| {
        selected
            .iter()
            .filter_map(|s| gmc.knowledge_cluster_of(s).ok())
            .flatten()
            .collect()
    });
    let views = found
        .into_iter()
        .map(|c| CommunityView {
            year: c.year,
            size: c.size,
            members: c
                .members
                .iter()
                .zip(&c.betweenness)
                .map(|(m, &b)| CommunityMember {
                    instrument: m.clone(),
                    betweenness: b,
                    industry: industries.get(m).cloned(),
                    in_knowledge_cluster_of_selected: highlighted.as_ref().map(|h| h.contains(m)),
                })
                .collect(),
        })
        .collect();
    Ok(Json(views))
}

async fn ego(State(state): Shared, Path(id): Path<String>) -> ApiResult<EgoResult> {
    Ok(Json(state.network.ego_search(&instrument(&id)?)?))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ItemHolders {
    pub item: KnowledgeItem,
    pub companies: Vec<InstrumentId>,
}

async fn item_companies(
    State(state): Shared,
    Path((layer, attr, value)): Path<(String, String, String)>,
) -> ApiResult<ItemHolders> {
    let item = KnowledgeItem::parse(&layer, &attr, &value)?;
    if !state.network.has_item(&item) {
        return Err(ApiError::new(
            ErrorCode::UnknownItem,
            format!("unknown knowledge item {item}"),
        ));
    }
    let companies = state.network.companies_with_item(&item);
    Ok(Json(ItemHolders { item, companies }))
}

async fn clusters(State(state): Shared) -> ApiResult<Value> {
    state
        .gmc
        .as_ref()
        .map(|g| Json(g.to_json()))
        .ok_or_else(|| {
            ApiError::new(
                ErrorCode::NoClusters,
                "no multi-view clustering has been computed",
            )
        })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSessionRequest {
    pub year: i32,
    pub seeds: Vec<InstrumentId>,
    #[serde(default)]
    pub config: Option<ThresholdConfig>,
    #[serde(default)]
    pub max_size: Option<usize>,
    /// Client-chosen session id; server-assigned when absent.
    #[serde(default)]
    pub id: Option<String>,
    /// Idempotency key of the creation event.
    #[serde(default)]
    pub event_id: Option<String>,
}

async fn create_session(
    State(state): Shared,
    req: Result<Json<CreateSessionRequest>, JsonRejection>,
) -> ApiResult<ClusterSession> {
    let req = body(req)?;
    if req.seeds.is_empty() {
        return Err(ApiError::bad_request("at least one seed is required"));
    }
    let cache = state.cache(req.year)?;
    let mut cfg = req.config.unwrap_or_default();
    cfg.exclude.extend(state.store.config.benchmark.clone());
    let id = match req.id {
        Some(id) if id.trim().is_empty() => return Err(ApiError::bad_request("empty session id")),
        Some(id) => id,
        None => state.next_session_id(),
    };
    let session = ClusterSession::create(
        id,
        req.event_id.unwrap_or_else(|| "create".into()),
        Utc::now(),
        &cache,
        &cfg,
        &req.seeds,
        req.max_size.unwrap_or(DEFAULT_MAX_SIZE),
        &state.store.industry_map(),
    )?;
    let shared = state.insert_session(session)?;
    let snapshot = shared.lock().clone();
    Ok(Json(snapshot))
}

async fn get_session(State(state): Shared, Path(id): Path<String>) -> ApiResult<ClusterSession> {
    Ok(Json(state.session(&id)?.lock().clone()))
}

async fn session_log(
    State(state): Shared,
    Path(id): Path<String>,
) -> ApiResult<session::SessionDocument> {
    Ok(Json(state.session(&id)?.lock().document()))
}

/// One mutation; `id` is the idempotency key.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OpRequest {
    pub id: String,
    #[serde(default)]
    pub ts: Option<DateTime<Utc>>,
    #[serde(flatten)]
    pub op: SessionOp,
}

#[derive(Debug, Serialize)]
pub struct OpResponse {
    /// False when the event id had already been applied.
    pub applied: bool,
    pub event_count: usize,
    pub session: ClusterSession,
}

async fn apply_op(
    State(state): Shared,
    Path(id): Path<String>,
    req: Result<Json<OpRequest>, JsonRejection>,
) -> ApiResult<OpResponse> {
    let req = body(req)?;
    if req.id.trim().is_empty() {
        return Err(ApiError::bad_request("event id must be non-empty"));
    }
    if matches!(req.op, SessionOp::Create { .. }) {
        return Err(ApiError::bad_request(
            "sessions are created through POST /sessions",
        ));
    }
    let shared = state.session(&id)?;
    let catalog = StoreCatalog {
        store: &state.store,
        network: &state.network,
    };
    // the lock serializes writers to this session, persistence included
    let mut session = shared.lock();
    let event = SessionEvent {
        id: req.id,
        ts: req.ts.unwrap_or_else(Utc::now),
        op: req.op,
    };
    let outcome = session.apply(event, &catalog)?;
    if outcome == Applied::Applied {
        state.persist(&session)?;
    }
    Ok(Json(OpResponse {
        applied: outcome == Applied::Applied,
        event_count: session.events().len(),
        session: session.clone(),
    }))
}

#[derive(Debug, Deserialize)]
struct RangeQuery {
    from: Option<NaiveDate>,
    to: Option<NaiveDate>,
}

fn session_range(session: &ClusterSession, q: &RangeQuery) -> Result<DateRange, ApiError> {
    let range = DateRange {
        from: q.from.unwrap_or(session.range.from),
        to: q.to.unwrap_or(session.range.to),
    };
    if range.from > range.to {
        return Err(ApiError::new(
            ErrorCode::InvalidParameter,
            "from is after to",
        ));
    }
    Ok(range)
}

async fn matrix(
    State(state): Shared,
    Path(id): Path<String>,
    q: Result<Query<RangeQuery>, QueryRejection>,
) -> ApiResult<session::OrderedMatrix> {
    let q = query(q)?;
    let snapshot = state.session(&id)?.lock().clone();
    let range = session_range(&snapshot, &q)?;
    Ok(Json(session::ordered_matrix(
        &snapshot,
        &state.store,
        range,
    )?))
}

async fn upset(State(state): Shared, Path(id): Path<String>) -> ApiResult<session::UpsetTable> {
    let snapshot = state.session(&id)?.lock().clone();
    Ok(Json(snapshot.upset_table(&state.network)))
}

async fn returns(
    State(state): Shared,
    Path(id): Path<String>,
    q: Result<Query<RangeQuery>, QueryRejection>,
) -> ApiResult<BTreeMap<InstrumentId, Option<f64>>> {
    let q = query(q)?;
    let snapshot = state.session(&id)?.lock().clone();
    let range = session_range(&snapshot, &q)?;
    let out = session::period_returns(&snapshot.member_ids(), &state.store, range)
        .into_iter()
        .map(|(k, v)| (k, finite(v)))
        .collect();
    Ok(Json(out))
}

/// Prism wire form: the flat cell array plus `n`; clients rebuild `(x, y)`
/// with the public index formulas.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrismPayload {
    pub a: String,
    pub b: String,
    pub n: usize,
    pub min_window: usize,
    pub dates: Vec<NaiveDate>,
    pub values: Vec<Option<f64>>,
    /// Plain Pearson over the whole aligned range, computed independently
    /// of the triangle; equals the tip cell.
    pub full_correlation: Option<f64>,
}

impl PrismPayload {
    fn new(tri: &PrismTriangle, full_correlation: Option<f64>) -> Self {
        Self {
            a: tri.a.clone(),
            b: tri.b.clone(),
            n: tri.n,
            min_window: tri.min_window,
            dates: tri.dates.clone(),
            values: tri.values.iter().map(|&v| finite(v)).collect(),
            full_correlation,
        }
    }
}

#[derive(Debug, Deserialize)]
struct PrismQuery {
    a: String,
    b: String,
    from: Option<NaiveDate>,
    to: Option<NaiveDate>,
    min_window: Option<usize>,
}

fn date_bounds(
    from: Option<NaiveDate>,
    to: Option<NaiveDate>,
) -> Result<(NaiveDate, NaiveDate), ApiError> {
    let bounds = (from.unwrap_or(NaiveDate::MIN), to.unwrap_or(NaiveDate::MAX));
    if bounds.0 > bounds.1 {
        return Err(ApiError::new(
            ErrorCode::InvalidParameter,
            "from is after to",
        ));
    }
    Ok(bounds)
}

fn observations<'a>(
    state: &'a AppState,
    id: &InstrumentId,
) -> Result<&'a prismatic_core::ingest::ReturnSeries, ApiError> {
    known(state, id)?;
    state.store.observations(id).ok_or_else(|| {
        ApiError::new(
            ErrorCode::SeriesTooShort,
            format!("{id} has too few observations"),
        )
    })
}

async fn prism_pair(
    State(state): Shared,
    q: Result<Query<PrismQuery>, QueryRejection>,
) -> ApiResult<PrismPayload> {
    let q = query(q)?;
    let (a, b) = (instrument(&q.a)?, instrument(&q.b)?);
    let (from, to) = date_bounds(q.from, q.to)?;
    let pair = prism::align_pair(
        observations(&state, &a)?,
        observations(&state, &b)?,
        from,
        to,
    );
    let tri = prism::build_triangle(&pair, q.min_window.unwrap_or(DEFAULT_MIN_WINDOW))?;
    let full = corrnet::pearson(&pair.xs, &pair.ys)?;
    Ok(Json(PrismPayload::new(&tri, full)))
}

#[derive(Debug, Deserialize)]
struct RefsQuery {
    stock: String,
    versus: Option<String>,
    from: Option<NaiveDate>,
    to: Option<NaiveDate>,
    min_window: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefsPayload {
    pub market: PrismPayload,
    pub industry: PrismPayload,
    pub pair: Option<PrismPayload>,
}

async fn prism_refs(
    State(state): Shared,
    q: Result<Query<RefsQuery>, QueryRejection>,
) -> ApiResult<RefsPayload> {
    let q = query(q)?;
    let stock = instrument(&q.stock)?;
    known(&state, &stock)?;
    let versus = q.versus.as_deref().map(instrument).transpose()?;
    if let Some(v) = &versus {
        known(&state, v)?;
    }
    let (from, to) = date_bounds(q.from, q.to)?;
    let refs = prism::reference_prisms(
        &state.store,
        &stock,
        versus.as_ref(),
        from,
        to,
        q.min_window.unwrap_or(DEFAULT_MIN_WINDOW),
    )?;
    let wire = |t: &PrismTriangle| PrismPayload::new(t, finite(t.full_correlation()));
    Ok(Json(RefsPayload {
        market: wire(&refs.market),
        industry: wire(&refs.industry),
        pair: refs.pair.as_ref().map(wire),
    }))
}
