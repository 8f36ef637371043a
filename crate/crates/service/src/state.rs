use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};

use prismatic_core::corrnet::YearlyCorrelationCache;
use prismatic_core::ingest::InstrumentId;
use prismatic_core::knowledge::MultiLayerNetwork;
use prismatic_core::mvclust::GmcResult;
use prismatic_core::session::{ClusterSession, SessionDocument};
use prismatic_core::store::{self, Store, StoreError, GMC_FILE};

use crate::error::{ApiError, ErrorCode};

pub const SESSION_DIR: &str = "sessions";

pub type SharedSession = Arc<Mutex<ClusterSession>>;

/// Everything the handlers read. Store, network and clustering are
/// immutable after startup; caches load lazily; sessions are locked one by
/// one so writers to different sessions never contend.
pub struct AppState {
    pub store: Store,
    pub network: MultiLayerNetwork,
    pub gmc: Option<GmcResult>,
    data_dir: Option<PathBuf>,
    caches: RwLock<BTreeMap<i32, Option<Arc<YearlyCorrelationCache>>>>,
    sessions: RwLock<BTreeMap<String, SharedSession>>,
    next_session: AtomicU64,
}

impl AppState {
    /// In-memory state with preloaded caches; sessions are not persisted.
    pub fn new(store: Store, caches: Vec<YearlyCorrelationCache>, gmc: Option<GmcResult>) -> Self {
        let network = MultiLayerNetwork::build(&store.profiles);
        Self {
            store,
            network,
            gmc,
            data_dir: None,
            caches: RwLock::new(
                caches
                    .into_iter()
                    .map(|c| (c.year, Some(Arc::new(c))))
                    .collect(),
            ),
            sessions: RwLock::new(BTreeMap::new()),
            next_session: AtomicU64::new(1),
        }
    }

    /// Open a store directory. `benchmark` overrides the stored setting.
    pub fn open(dir: &Path, benchmark: Option<InstrumentId>) -> Result<Self, StoreError> {
        let mut store = Store::load(dir)?;
        if let Some(b) = benchmark {
            if !store.series.contains_key(&b) {
                return Err(StoreError::MissingBenchmark(b));
            }
            store.config.benchmark = Some(b);
        }
        let gmc_path = dir.join(GMC_FILE);
        let gmc = if gmc_path.exists() {
            let file = fs::File::open(&gmc_path).map_err(|e| StoreError::Io {
                path: gmc_path.clone(),
                source: e,
            })?;
            Some(
                serde_json::from_reader(BufReader::new(file)).map_err(|e| StoreError::Format {
                    path: gmc_path.clone(),
                    message: e.to_string(),
                })?,
            )
        } else {
            None
        };
        let mut state = Self::new(store, Vec::new(), gmc);
        state.data_dir = Some(dir.to_path_buf());
        *state.caches.get_mut() = store::cached_years(dir)?
            .into_iter()
            .map(|y| (y, None))
            .collect();
        state.load_sessions()?;
        Ok(state)
    }

    fn load_sessions(&mut self) -> Result<(), StoreError> {
        let Some(dir) = self.data_dir.as_ref().map(|d| d.join(SESSION_DIR)) else {
            return Ok(());
        };
        if !dir.exists() {
            return Ok(());
        }
        let entries = fs::read_dir(&dir).map_err(|e| StoreError::Io {
            path: dir.clone(),
            source: e,
        })?;
        let mut highest = 0;
        for entry in entries.flatten() {
            let path = entry.path();
            if path.extension().is_none_or(|e| e != "json") {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(|e| StoreError::Io {
                path: path.clone(),
                source: e,
            })?;
            let format = |message: String| StoreError::Format {
                path: path.clone(),
                message,
            };
            let doc: SessionDocument =
                serde_json::from_str(&text).map_err(|e| format(e.to_string()))?;
            let session = ClusterSession::replay(&doc).map_err(|e| format(e.to_string()))?;
            if let Some(n) = session
                .id
                .strip_prefix('s')
                .and_then(|n| n.parse::<u64>().ok())
            {
                highest = highest.max(n);
            }
            self.sessions
                .get_mut()
                .insert(session.id.clone(), Arc::new(Mutex::new(session)));
        }
        self.next_session = AtomicU64::new(highest + 1);
        Ok(())
    }

    pub fn years(&self) -> Vec<i32> {
        self.caches.read().keys().copied().collect()
    }

    /// Instrument count of a year's cache, from the file header when the
    /// cache is not loaded yet.
    pub fn instrument_count(&self, year: i32) -> Result<usize, ApiError> {
        if let Some(Some(c)) = self.caches.read().get(&year) {
            return Ok(c.len());
        }
        let path = self.cache_file(year)?;
        let file = fs::File::open(&path).map_err(|e| internal(&path, e))?;
        Ok(YearlyCorrelationCache::read_header(BufReader::new(file))?)
    }

    fn cache_file(&self, year: i32) -> Result<PathBuf, ApiError> {
        match &self.data_dir {
            Some(dir) if self.caches.read().contains_key(&year) => Ok(store::cache_path(dir, year)),
            _ => Err(empty_year(year)),
        }
    }

    pub fn cache(&self, year: i32) -> Result<Arc<YearlyCorrelationCache>, ApiError> {
        if let Some(Some(c)) = self.caches.read().get(&year) {
            return Ok(c.clone());
        }
        let path = self.cache_file(year)?;
        let mut caches = self.caches.write();
        if let Some(Some(c)) = caches.get(&year) {
            return Ok(c.clone());
        }
        let file = fs::File::open(&path).map_err(|e| internal(&path, e))?;
        let cache = Arc::new(YearlyCorrelationCache::read_from(
            BufReader::new(file),
            year,
        )?);
        caches.insert(year, Some(cache.clone()));
        Ok(cache)
    }

    pub fn session(&self, id: &str) -> Result<SharedSession, ApiError> {
        self.sessions.read().get(id).cloned().ok_or_else(|| {
            ApiError::new(ErrorCode::UnknownSession, format!("unknown session {id}"))
        })
    }

    /// Fresh server-assigned session id.
    pub fn next_session_id(&self) -> String {
        loop {
            let id = format!("s{}", self.next_session.fetch_add(1, Ordering::Relaxed));
            if !self.sessions.read().contains_key(&id) {
                return id;
            }
        }
    }

    pub fn insert_session(&self, session: ClusterSession) -> Result<SharedSession, ApiError> {
        let mut sessions = self.sessions.write();
        if sessions.contains_key(&session.id) {
            return Err(ApiError::new(
                ErrorCode::DuplicateSession,
                format!("session {} already exists", session.id),
            ));
        }
        self.persist(&session)?;
        let shared = Arc::new(Mutex::new(session));
        sessions.insert(shared.lock().id.clone(), shared.clone());
        Ok(shared)
    }

    /// Write the session's event log, if the state is backed by a directory.
    pub fn persist(&self, session: &ClusterSession) -> Result<(), ApiError> {
        let Some(dir) = &self.data_dir else {
            return Ok(());
        };
        let dir = dir.join(SESSION_DIR);
        fs::create_dir_all(&dir).map_err(|e| internal(&dir, e))?;
        let path = dir.join(format!("{}.json", session.id));
        let tmp = path.with_extension("json.tmp");
        let body = serde_json::to_vec_pretty(&session.document())
            .map_err(|e| ApiError::new(ErrorCode::Internal, e.to_string()))?;
        fs::write(&tmp, body).map_err(|e| internal(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| internal(&path, e))
    }
}

fn internal(path: &Path, e: std::io::Error) -> ApiError {
    ApiError::new(ErrorCode::Internal, format!("{}: {e}", path.display()))
}

pub(crate) fn empty_year(year: i32) -> ApiError {
    ApiError::new(
        ErrorCode::EmptyYear,
        format!("no correlation cache for year {year}"),
    )
}
