use std::collections::{HashMap, HashSet};
use std::sync::{Arc, Mutex, OnceLock, RwLock};
use std::time::{Duration, Instant};

use stull_core::baselines::{
    FixedBufferIndex, FixedBufferSession, QuadTreeIndex, RandomPathSession, DEFAULT_BUFFER_SIZE, DEFAULT_LEAF_CAPACITY,
};
use stull_core::evaluation::{count_grid, generate_synthetic, HourHistogram};
use stull_core::persist::{load_index, read_points, PointFormat};
use stull_core::{
    rng, GeoPoint, IncrementalSampler, IndexConfig, Query, SamplingConfig, SamplingError, SamplingSession,
    StullIndex, TimeRange,
};
use uuid::Uuid;

use crate::error::ApiError;
use crate::model::*;

#[derive(Debug, Clone, Copy)]
pub struct ServiceConfig {
    /// Idle time after which a session is reclaimed.
    pub session_ttl: Duration,
    pub reap_interval: Duration,
    /// Hint returned with 409 responses.
    pub retry_after: Duration,
    /// How long reclaimed ids keep answering 410 instead of 404.
    pub tombstone_ttl: Duration,
    pub max_grid_side: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            session_ttl: Duration::from_secs(600),
            reap_interval: Duration::from_secs(15),
            retry_after: Duration::from_millis(500),
            tombstone_ttl: Duration::from_secs(3600),
            max_grid_side: 2048,
        }
    }
}

/// One immutable version of a dataset. Baseline indexes are built on first
/// use.
pub struct Snapshot {
    pub index: Arc<StullIndex>,
    build_seed: u64,
    quadtree: OnceLock<Arc<QuadTreeIndex>>,
    fixed: OnceLock<Arc<FixedBufferIndex>>,
}

impl Snapshot {
    fn new(index: StullIndex, build_seed: u64) -> Self {
        Snapshot {
            index: Arc::new(index),
            build_seed,
            quadtree: OnceLock::new(),
            fixed: OnceLock::new(),
        }
    }

    fn points(&self) -> Vec<GeoPoint> {
        self.index.points().copied().collect()
    }

    fn quadtree(&self) -> Arc<QuadTreeIndex> {
        self.quadtree
            .get_or_init(|| {
                let cfg = *self.index.config();
                Arc::new(QuadTreeIndex::build(&self.points(), cfg, DEFAULT_LEAF_CAPACITY).expect("points already validated"))
            })
            .clone()
    }

    fn fixed(&self) -> Arc<FixedBufferIndex> {
        self.fixed
            .get_or_init(|| {
                let cfg = *self.index.config();
                Arc::new(
                    FixedBufferIndex::build(&self.points(), cfg, DEFAULT_BUFFER_SIZE, self.build_seed)
                        .expect("points already validated"),
                )
            })
            .clone()
    }
}

enum Phase {
    Building,
    Ready(Arc<Snapshot>),
    Failed(String),
}

struct DatasetState {
    phase: Phase,
    /// Sessions that have not been exhausted, deleted or reclaimed.
    open: HashSet<Uuid>,
    pending: Option<Vec<GeoPoint>>,
    applying: bool,
    version: u64,
}

struct Dataset {
    build_seed: u64,
    state: Mutex<DatasetState>,
}

struct Session {
    dataset: Uuid,
    info: SessionInfo,
    sampler: Box<dyn IncrementalSampler + Send>,
    index: Arc<StullIndex>,
    query: Query,
    delivered: Vec<GeoPoint>,
    hours: HourHistogram,
}

struct SessionSlot {
    last_access: Mutex<Instant>,
    session: Arc<tokio::sync::Mutex<Session>>,
}

impl SessionSlot {
    fn touch(&self) {
        *self.last_access.lock().unwrap() = Instant::now();
    }
}

struct Inner {
    config: ServiceConfig,
    datasets: RwLock<HashMap<Uuid, Arc<Dataset>>>,
    sessions: Mutex<HashMap<Uuid, Arc<SessionSlot>>>,
    /// Reclaimed or deleted session ids, with the time they went away.
    gone: Mutex<HashMap<Uuid, Instant>>,
}

/// Shared service state; cheap to clone.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

fn parse_id(raw: &str, what: &str) -> Result<Uuid, ApiError> {
    Uuid::parse_str(raw).map_err(|_| ApiError::not_found(what, raw))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))
}

fn load_source(source: DatasetSource, config: DatasetConfig) -> Result<StullIndex, String> {
    let index_config = |c: Option<IndexConfig>| c.ok_or_else(|| "config.index is required for this source".to_string());
    let build = |points: Vec<GeoPoint>, c: Option<IndexConfig>| {
        StullIndex::build(&points, index_config(c)?, config.build_seed).map_err(|e| e.to_string())
    };
    match source {
        DatasetSource::Index { path } => load_index(&path).map_err(|e| format!("{}: {e}", path.display())),
        DatasetSource::Synthetic { spec } => build(generate_synthetic(&spec).map_err(|e| e.to_string())?, config.index),
        DatasetSource::Points { points } => build(points.into_iter().map(GeoPoint::from).collect(), config.index),
        DatasetSource::File { path, format } => {
            let format = format.unwrap_or_else(|| PointFormat::from_path(&path));
            let (points, report) = read_points(&path, format).map_err(|e| format!("{}: {e}", path.display()))?;
            if report.rejected > 0 {
                tracing::warn!(rejected = report.rejected, reasons = ?report.reasons, "rows rejected during ingest");
            }
            build(points, config.index)
        }
    }
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        AppState {
            inner: Arc::new(Inner {
                config,
                datasets: RwLock::new(HashMap::new()),
                sessions: Mutex::new(HashMap::new()),
                gone: Mutex::new(HashMap::new()),
            }),
        }
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.inner.config
    }

    fn retry_ms(&self) -> u64 {
        self.inner.config.retry_after.as_millis() as u64
    }

    fn dataset(&self, raw: &str) -> Result<(Uuid, Arc<Dataset>), ApiError> {
        let id = parse_id(raw, "dataset")?;
        let ds = self.inner.datasets.read().unwrap().get(&id).cloned();
        ds.map(|d| (id, d)).ok_or_else(|| ApiError::not_found("dataset", raw))
    }

    /// Registers a dataset and builds it in the background.
    pub fn create_dataset(&self, req: CreateDataset) -> Result<DatasetStatus, ApiError> {
        if !matches!(req.source, DatasetSource::Index { .. }) && req.config.index.is_none() {
            return Err(ApiError::bad_request("config.index is required for this source"));
        }
        if let Some(c) = &req.config.index {
            c.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
        }
        let id = Uuid::new_v4();
        let ds = Arc::new(Dataset {
            build_seed: req.config.build_seed,
            state: Mutex::new(DatasetState {
                phase: Phase::Building,
                open: HashSet::new(),
                pending: None,
                applying: false,
                version: 0,
            }),
        });
        self.inner.datasets.write().unwrap().insert(id, ds.clone());
        let seed = req.config.build_seed;
        tokio::spawn(async move {
            let result = tokio::task::spawn_blocking(move || load_source(req.source, req.config)).await;
            let phase = match result {
                Ok(Ok(index)) => {
                    tracing::info!(%id, points = index.point_count(), "dataset ready");
                    Phase::Ready(Arc::new(Snapshot::new(index, seed)))
                }
                Ok(Err(msg)) => Phase::Failed(msg),
                Err(e) => Phase::Failed(format!("build task failed: {e}")),
            };
            if let Phase::Failed(msg) = &phase {
                tracing::warn!(%id, error = %msg, "dataset build failed");
            }
            ds.state.lock().unwrap().phase = phase;
        });
        Ok(self.status_of(id, &self.inner.datasets.read().unwrap()[&id]))
    }

    fn status_of(&self, id: Uuid, ds: &Dataset) -> DatasetStatus {
        let st = ds.state.lock().unwrap();
        let (status, error, index) = match &st.phase {
            Phase::Building => (DatasetPhase::Building, None, None),
            Phase::Ready(s) => (DatasetPhase::Ready, None, Some(s.index.clone())),
            Phase::Failed(m) => (DatasetPhase::Failed, Some(m.clone()), None),
        };
        DatasetStatus {
            id: id.to_string(),
            status,
            error,
            config: index.as_ref().map(|i| *i.config()),
            point_count: index.as_ref().map_or(0, |i| i.point_count()),
            bin_count: index.as_ref().map_or(0, |i| i.bin_count()),
            version: st.version,
            open_sessions: st.open.len(),
            pending_insert: st.pending.is_some() || st.applying,
        }
    }

    pub fn dataset_status(&self, raw: &str) -> Result<DatasetStatus, ApiError> {
        let (id, ds) = self.dataset(raw)?;
        Ok(self.status_of(id, &ds))
    }

    pub fn list_datasets(&self) -> Vec<DatasetStatus> {
        let map = self.inner.datasets.read().unwrap();
        let mut v: Vec<DatasetStatus> = map.iter().map(|(id, ds)| self.status_of(*id, ds)).collect();
        v.sort_by(|a, b| a.id.cmp(&b.id));
        v
    }

    fn ready(&self, st: &DatasetState) -> Result<Arc<Snapshot>, ApiError> {
        match &st.phase {
            Phase::Ready(s) => Ok(s.clone()),
            Phase::Building => Err(ApiError::conflict("dataset_building", "the dataset is still being built")
                .retry_after(self.retry_ms())),
            Phase::Failed(m) => Err(ApiError::conflict("dataset_failed", format!("the dataset failed to build: {m}"))),
        }
    }

    /// Validates an insert and applies it now, or queues it until every open
    /// session on the dataset has finished.
    pub async fn insert(&self, raw: &str, req: InsertRequest) -> Result<InsertResponse, ApiError> {
        let (_, ds) = self.dataset(raw)?;
        let points: Vec<GeoPoint> = req.points.into_iter().map(GeoPoint::from).collect();
        let n = points.len();
        let open = {
            let mut st = ds.state.lock().unwrap();
            let snap = self.ready(&st)?;
            if st.pending.is_some() || st.applying {
                return Err(ApiError::conflict("insert_pending", "another insert is waiting to be applied")
                    .retry_after(self.retry_ms()));
            }
            snap.index
                .config()
                .validate_points(&points)
                .map_err(|e| ApiError::bad_request(e.to_string()))?;
            let open = st.open.len();
            if open > 0 {
                st.pending = Some(points);
                tracing::info!(points = n, open, "insert queued behind open sessions");
                return Ok(InsertResponse {
                    status: InsertStatus::Pending,
                    points: n,
                    bins_touched: None,
                    open_sessions: open,
                });
            }
            st.applying = true;
            st.pending = Some(points);
            open
        };
        let bins = self.apply_pending(ds).await?;
        Ok(InsertResponse {
            status: InsertStatus::Applied,
            points: n,
            bins_touched: Some(bins),
            open_sessions: open,
        })
    }

    /// Applies the queued insert. The caller has set `applying`.
    async fn apply_pending(&self, ds: Arc<Dataset>) -> Result<usize, ApiError> {
        let (snap, points, version) = {
            let mut st = ds.state.lock().unwrap();
            let Phase::Ready(snap) = &st.phase else {
                st.applying = false;
                return Err(ApiError::internal("dataset is not ready"));
            };
            (snap.clone(), st.pending.take().unwrap_or_default(), st.version)
        };
        let seed = rng::derive_seed(ds.build_seed, &[version + 1]);
        let build_seed = ds.build_seed;
        let result = blocking(move || {
            let mut index = (*snap.index).clone();
            index.insert(&points, seed).map(|r| (index, r))
        })
        .await;
        let mut st = ds.state.lock().unwrap();
        st.applying = false;
        match result? {
            Ok((index, report)) => {
                tracing::info!(points = report.points_inserted, bins = report.bins_touched, "insert applied");
                st.phase = Phase::Ready(Arc::new(Snapshot::new(index, build_seed)));
                st.version += 1;
                Ok(report.bins_touched)
            }
            Err(e) => Err(ApiError::bad_request(e.to_string())),
        }
    }

    /// Drops a session from its dataset's open set and starts any insert
    /// that was waiting for it.
    fn close(&self, dataset: Uuid, sid: Uuid) {
        let Some(ds) = self.inner.datasets.read().unwrap().get(&dataset).cloned() else {
            return;
        };
        let start = {
            let mut st = ds.state.lock().unwrap();
            st.open.remove(&sid);
            let start = st.open.is_empty() && st.pending.is_some() && !st.applying;
            if start {
                st.applying = true;
            }
            start
        };
        if start {
            let this = self.clone();
            tokio::spawn(async move {
                if let Err(e) = this.apply_pending(ds).await {
                    tracing::warn!(error = %e.message, "queued insert failed");
                }
            });
        }
    }

    pub async fn open_session(&self, raw: &str, req: SessionRequest) -> Result<SessionInfo, ApiError> {
        let (dataset, ds) = self.dataset(raw)?;
        if req.updates_per_level == 0 {
            return Err(ApiError::bad_request("updates_per_level must be at least 1"));
        }
        if let Some(r) = &req.rect {
            r.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
        }
        if let Some(t) = &req.time {
            TimeRange::new(t.start, t.end).map_err(|e| ApiError::bad_request(e.to_string()))?;
        }
        let sid = Uuid::new_v4();
        let snap = {
            let mut st = ds.state.lock().unwrap();
            let snap = self.ready(&st)?;
            if st.pending.is_some() || st.applying {
                return Err(ApiError::conflict("insert_pending", "an insert is waiting for open sessions to finish")
                    .retry_after(self.retry_ms()));
            }
            st.open.insert(sid);
            snap
        };
        let extent = snap.index.config().extent;
        let query = Query::new(req.rect.unwrap_or(extent), req.time.unwrap_or(TimeRange::all()));
        let seed = req.seed.unwrap_or_else(|| Uuid::new_v4().as_u64_pair().0);
        let cfg = SamplingConfig::new(req.updates_per_level, seed);
        let total = cfg.total_updates(snap.index.height());
        let kind = req.sampler;
        let index = snap.index.clone();
        let built = blocking(move || -> Result<Box<dyn IncrementalSampler + Send>, SamplingError> {
            Ok(match kind {
                SamplerKind::Stull => Box::new(SamplingSession::open(snap.index.clone(), query, cfg)?),
                SamplerKind::RandomPath => Box::new(RandomPathSession::open(snap.quadtree(), query, total, seed)?),
                SamplerKind::FixedBuffer => Box::new(FixedBufferSession::open(snap.fixed(), query, total)?),
            })
        })
        .await;
        let sampler = match built {
            Ok(Ok(s)) => s,
            Ok(Err(e)) => {
                self.close(dataset, sid);
                return Err(ApiError::bad_request(e.to_string()));
            }
            Err(e) => {
                self.close(dataset, sid);
                return Err(e);
            }
        };
        let exhausted = sampler.is_exhausted();
        let info = SessionInfo {
            id: sid.to_string(),
            dataset: dataset.to_string(),
            sampler: kind,
            seed,
            rect: query.rect,
            time: query.time,
            theta: cfg.theta(index.height()),
            total_updates: sampler.total_updates(),
            updates_delivered: 0,
            exhausted,
        };
        let session = Session {
            dataset,
            info: info.clone(),
            sampler,
            index,
            query,
            delivered: Vec::new(),
            hours: HourHistogram::default(),
        };
        self.inner.sessions.lock().unwrap().insert(
            sid,
            Arc::new(SessionSlot {
                last_access: Mutex::new(Instant::now()),
                session: Arc::new(tokio::sync::Mutex::new(session)),
            }),
        );
        if exhausted {
            self.close(dataset, sid);
        }
        tracing::debug!(%sid, %dataset, ?kind, "session opened");
        Ok(info)
    }

    fn slot(&self, raw: &str) -> Result<(Uuid, Arc<SessionSlot>), ApiError> {
        let sid = parse_id(raw, "session")?;
        if let Some(slot) = self.inner.sessions.lock().unwrap().get(&sid).cloned() {
            slot.touch();
            return Ok((sid, slot));
        }
        if self.inner.gone.lock().unwrap().contains_key(&sid) {
            return Err(ApiError::gone("session_reclaimed", format!("session {raw} was deleted or expired")));
        }
        Err(ApiError::not_found("session", raw))
    }

    /// Runs one update. Calls on the same session queue behind each other.
    pub async fn next(&self, raw: &str) -> Result<NextResponse, ApiError> {
        let (sid, slot) = self.slot(raw)?;
        let mut guard = slot.session.clone().lock_owned().await;
        if guard.sampler.is_exhausted() {
            return Err(ApiError::gone("session_exhausted", format!("session {raw} has delivered every update")));
        }
        let (resp, dataset, exhausted) = blocking(move || {
            let s = &mut *guard;
            let batch = s.sampler.next_update()?;
            s.hours.add(&batch.points);
            s.delivered.extend_from_slice(&batch.points);
            s.info.updates_delivered = batch.update_number;
            s.info.exhausted = batch.exhausted;
            Ok::<_, SamplingError>((NextResponse::from(&batch), s.dataset, batch.exhausted))
        })
        .await?
        .map_err(|e| ApiError::gone("session_exhausted", e.to_string()))?;
        slot.touch();
        if exhausted {
            self.close(dataset, sid);
        }
        Ok(resp)
    }

    pub async fn info(&self, raw: &str) -> Result<SessionInfo, ApiError> {
        let (_, slot) = self.slot(raw)?;
        let s = slot.session.lock().await;
        Ok(s.info.clone())
    }

    pub async fn grid(&self, raw: &str, params: GridParams) -> Result<GridResponse, ApiError> {
        let (rows, cols) = (params.rows.unwrap_or(64), params.cols.unwrap_or(64));
        let max = self.inner.config.max_grid_side;
        if !(1..=max).contains(&rows) || !(1..=max).contains(&cols) {
            return Err(ApiError::bad_request(format!("rows and cols must be in 1..={max}")));
        }
        let (_, slot) = self.slot(raw)?;
        let guard = slot.session.clone().lock_owned().await;
        blocking(move || {
            let s = &*guard;
            let extent = s.index.config().extent;
            let area = s.query.rect.intersection(&extent).unwrap_or(extent);
            let (counts, grid) = count_grid(&s.delivered, &area, rows, cols).map_err(|e| ApiError::bad_request(e.to_string()))?;
            Ok(GridResponse {
                rows,
                cols,
                extent: area,
                counts,
                values: grid.values,
                points_delivered: s.delivered.len(),
            })
        })
        .await?
    }

    pub async fn hours(&self, raw: &str) -> Result<HoursResponse, ApiError> {
        let (_, slot) = self.slot(raw)?;
        let s = slot.session.lock().await;
        Ok(HoursResponse {
            counts: s.hours.counts,
            values: s.hours.values,
            points_delivered: s.hours.total(),
        })
    }

    pub async fn delete(&self, raw: &str) -> Result<(), ApiError> {
        let (sid, slot) = self.slot(raw)?;
        self.inner.sessions.lock().unwrap().remove(&sid);
        self.inner.gone.lock().unwrap().insert(sid, Instant::now());
        let dataset = slot.session.lock().await.dataset;
        self.close(dataset, sid);
        tracing::debug!(%sid, "session deleted");
        Ok(())
    }

    /// Reclaims sessions idle for longer than the TTL and forgets old
    /// tombstones. Sessions with a request in flight are skipped. Returns the
    /// number reclaimed.
    pub fn reap(&self, now: Instant) -> usize {
        let ttl = self.inner.config.session_ttl;
        let mut expired = Vec::new();
        {
            let mut sessions = self.inner.sessions.lock().unwrap();
            sessions.retain(|sid, slot| {
                let idle = now.saturating_duration_since(*slot.last_access.lock().unwrap());
                if idle < ttl {
                    return true;
                }
                match slot.session.try_lock() {
                    Ok(s) => {
                        expired.push((*sid, s.dataset));
                        false
                    }
                    Err(_) => true,
                }
            });
        }
        {
            let mut gone = self.inner.gone.lock().unwrap();
            let keep = self.inner.config.tombstone_ttl;
            gone.retain(|_, at| now.saturating_duration_since(*at) < keep);
            for (sid, _) in &expired {
                gone.insert(*sid, now);
            }
        }
        for &(sid, dataset) in &expired {
            tracing::debug!(%sid, "session reclaimed");
            self.close(dataset, sid);
        }
        expired.len()
    }

    /// Runs [`AppState::reap`] on the configured interval until the runtime
    /// shuts down.
    pub fn spawn_reaper(&self) -> tokio::task::JoinHandle<()> {
        let this = self.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(this.inner.config.reap_interval);
            loop {
                tick.tick().await;
                this.reap(Instant::now());
            }
        })
    }
}
