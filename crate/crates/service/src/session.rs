//! Session state and the optimizer task each session owns.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex as SyncMutex};

use ipbc_core::cluster::{dbscan, suggest_eps};
use ipbc_core::constraints::total_loss;
use ipbc_core::data::{generate_blobs, read_csv};
use ipbc_core::error::{ConstraintError, ProjectionError};
use ipbc_core::graph::build_graph;
use ipbc_core::{
    explain_all, init_layout, optimize, warm_restart, Constraint, ConstraintSet, Dataset,
    EmbeddingState, Insertion, PipelineParams, PointId, StopToken, WeightedGraph,
};
use ndarray::Array2;
use tokio::sync::{watch, Mutex};
use tokio::task::JoinHandle;

use crate::error::ApiError;
use crate::wire::*;

pub const DEFAULT_MAX_SESSIONS: usize = 4;
pub const DEFAULT_MAX_POINTS: usize = 20_000;

#[derive(Debug, Clone, Copy)]
pub struct ServiceConfig {
    pub max_sessions: usize,
    pub max_points: usize,
    /// Upper bound on frames per second sent to each subscriber.
    pub max_fps: f64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { max_sessions: DEFAULT_MAX_SESSIONS, max_points: DEFAULT_MAX_POINTS, max_fps: 10.0 }
    }
}

struct Run {
    stop: StopToken,
    handle: JoinHandle<Result<EmbeddingState, ProjectionError>>,
}

struct Inner {
    /// Last settled layout; the running task works on a copy.
    state: EmbeddingState,
    constraints: ConstraintSet,
    run: Option<Run>,
    clusters: Option<ClusterResponse>,
    error: Option<String>,
}

pub struct Session {
    pub id: String,
    dataset: Arc<Dataset>,
    graph: Arc<WeightedGraph>,
    params: PipelineParams,
    ids: HashMap<PointId, usize>,
    inner: Mutex<Inner>,
    frames: Arc<watch::Sender<Arc<FrameRecord>>>,
    status: Arc<watch::Sender<Status>>,
}

impl Session {
    pub fn n_points(&self) -> usize {
        self.dataset.n_points()
    }

    pub fn subscribe(&self) -> watch::Receiver<Arc<FrameRecord>> {
        self.frames.subscribe()
    }

    pub fn status(&self) -> Status {
        *self.status.borrow()
    }

    fn spawn(&self, inner: &mut Inner, warm: bool) {
        let stop = StopToken::new();
        let (state, cs) = (inner.state.clone(), inner.constraints.clone());
        let (graph, params) = (self.graph.clone(), self.params.optimizer.clone());
        let (frames, status, id) = (self.frames.clone(), self.status.clone(), self.id.clone());
        let token = stop.clone();
        status.send_replace(Status::Optimizing);
        let handle = tokio::task::spawn_blocking(move || {
            let mut emit = |f: &ipbc_core::Frame| {
                frames.send_replace(Arc::new(FrameRecord::new(&id, f.epoch, f.coords.view(), f.loss)));
            };
            let out = if warm {
                warm_restart(state, &graph, &cs, &params, &mut emit, &token)
            } else {
                optimize(state, &graph, &cs, &params, &mut emit, &token)
            };
            if out.is_err() {
                status.send_replace(Status::Error);
            } else if !token.is_cancelled() {
                status.send_replace(Status::Idle);
            }
            out
        });
        inner.run = Some(Run { stop, handle });
    }

    /// Collects a finished run, or a running one after cancelling it.
    async fn settle(&self, inner: &mut Inner, cancel: bool) -> Result<(), ApiError> {
        let Some(run) = inner.run.take() else { return Ok(()) };
        if !cancel && !run.handle.is_finished() {
            inner.run = Some(run);
            return Ok(());
        }
        run.stop.cancel();
        match run.handle.await {
            Ok(Ok(state)) => {
                inner.state = state;
                inner.error = None;
            }
            Ok(Err(err)) => {
                tracing::error!(session = %self.id, %err, "optimization failed");
                inner.error = Some(err.to_string());
                self.status.send_replace(Status::Error);
            }
            Err(err) => return Err(ApiError::Internal(err.to_string())),
        }
        Ok(())
    }

    pub async fn status_report(&self) -> Result<StatusResponse, ApiError> {
        let mut inner = self.inner.lock().await;
        self.settle(&mut inner, false).await?;
        let running = inner.run.is_some();
        Ok(StatusResponse {
            session_id: self.id.clone(),
            status: if running { Status::Optimizing } else { self.status() },
            epoch: (!running).then_some(inner.state.epoch),
            n_points: self.n_points(),
            must_links: inner.constraints.must_links().count(),
            cannot_links: inner.constraints.cannot_links().count(),
            error: inner.error.clone(),
        })
    }

    fn to_wire(&self, c: &Constraint) -> WireConstraint {
        let ids = self.dataset.point_ids();
        WireConstraint { kind: c.kind, i: ids[c.i], j: ids[c.j], weight: c.weight }
    }

    pub async fn submit(&self, records: Vec<WireConstraint>) -> Result<SubmitResponse, ApiError> {
        let mut inner = self.inner.lock().await;
        let mut verdicts = Vec::with_capacity(records.len());
        let mut accepted = Vec::new();
        let mut duplicates = 0;
        // validate against a scratch copy so the running task's snapshot is untouched
        let mut next = inner.constraints.clone();
        for (index, rec) in records.iter().enumerate() {
            let reject = |reason, conflicting| Verdict { index, status: VerdictStatus::Rejected, reason: Some(reason), conflicting };
            let (Some(&i), Some(&j)) = (self.ids.get(&rec.i), self.ids.get(&rec.j)) else {
                verdicts.push(reject(RejectReason::UnknownPoint, None));
                continue;
            };
            let c = Constraint { kind: rec.kind, i, j, weight: rec.weight, round: 0 };
            match next.add(c) {
                Ok(Insertion::Added) => {
                    accepted.push(index);
                    verdicts.push(Verdict { index, status: VerdictStatus::Accepted, reason: None, conflicting: None });
                }
                Ok(Insertion::Duplicate) => {
                    duplicates += 1;
                    verdicts.push(Verdict { index, status: VerdictStatus::Duplicate, reason: None, conflicting: None });
                }
                Err(ConstraintError::Conflict { existing, .. }) => {
                    verdicts.push(reject(RejectReason::Conflict, Some(self.to_wire(&existing))))
                }
                Err(ConstraintError::SelfPair(_)) => verdicts.push(reject(RejectReason::SelfPair, None)),
                Err(ConstraintError::BadWeight(_)) => verdicts.push(reject(RejectReason::BadWeight, None)),
                Err(ConstraintError::OutOfRange { .. }) => verdicts.push(reject(RejectReason::UnknownPoint, None)),
            }
        }
        let rejected = verdicts.iter().filter(|v| v.status == VerdictStatus::Rejected).count();
        let restarted = !accepted.is_empty();
        let response = SubmitResponse { accepted: accepted.len(), duplicates, rejected, restarted, verdicts };
        if !restarted {
            if rejected > 0 {
                return Err(ApiError::NothingAccepted(response));
            }
            return Ok(response);
        }
        self.settle(&mut inner, true).await?;
        inner.constraints = next;
        inner.clusters = None;
        tracing::info!(session = %self.id, accepted = accepted.len(), rejected, "constraints accepted, warm restart");
        self.spawn(&mut inner, true);
        Ok(response)
    }

    pub async fn cluster(&self, req: ClusterRequest) -> Result<ClusterResponse, ApiError> {
        let mut inner = self.inner.lock().await;
        self.settle(&mut inner, false).await?;
        if inner.run.is_some() {
            return Err(ApiError::Busy);
        }
        let coords: Array2<f64> = inner.state.coords.clone();
        let (ds, explain) = (self.dataset.clone(), self.params.explain);
        let min_pts = req.min_pts.unwrap_or(self.params.min_pts);
        let eps = req.eps.or(self.params.eps);
        let response = tokio::task::spawn_blocking(move || -> Result<ClusterResponse, ApiError> {
            let eps = match eps {
                Some(e) => e,
                None => suggest_eps(coords.view(), min_pts).map_err(|e| ApiError::Params(e.to_string()))?,
            };
            let clusters = dbscan(coords.view(), eps, min_pts).map_err(|e| ApiError::Params(e.to_string()))?;
            if clusters.k_found < 2 {
                let warning = if clusters.k_found == 0 {
                    "no clusters found; every point is noise".to_string()
                } else {
                    "only one cluster found".to_string()
                };
                return Ok(ClusterResponse { clusters, explanations: Vec::new(), warning: Some(warning) });
            }
            let explanations = explain_all(&ds, &clusters, &explain);
            Ok(ClusterResponse { clusters, explanations, warning: None })
        })
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
        inner.clusters = Some(response.clone());
        Ok(response)
    }

    async fn shutdown(&self) {
        let mut inner = self.inner.lock().await;
        if let Some(run) = inner.run.take() {
            run.stop.cancel();
            let _ = run.handle.await;
        }
    }
}

fn load_dataset(src: DatasetSource) -> Result<Dataset, ApiError> {
    let bad = |e: ipbc_core::error::DataError| ApiError::Dataset(e.to_string());
    match src {
        DatasetSource::Csv { text, label_column } => read_csv(text.as_bytes(), label_column.as_deref()).map_err(bad),
        DatasetSource::Blobs(spec) => generate_blobs(&spec).map_err(bad),
        DatasetSource::Inline { features, labels, feature_names, point_ids } => {
            let n = features.len();
            let d = features.first().map_or(0, Vec::len);
            if features.iter().any(|r| r.len() != d) {
                return Err(ApiError::Dataset("rows differ in length".into()));
            }
            let flat: Vec<f64> = features.into_iter().flatten().collect();
            let x = Array2::from_shape_vec((n, d), flat).map_err(|e| ApiError::Dataset(e.to_string()))?;
            let names = feature_names.unwrap_or_else(|| (0..d).map(|j| format!("f{j}")).collect());
            match point_ids {
                Some(ids) => Dataset::with_ids(x, labels, names, ids).map_err(bad),
                None => Dataset::new(x, labels, names).map_err(bad),
            }
        }
    }
}

/// Registry of live sessions.
pub struct SessionManager {
    config: ServiceConfig,
    sessions: SyncMutex<HashMap<String, Arc<Session>>>,
    next_id: AtomicU64,
}

impl SessionManager {
    pub fn new(config: ServiceConfig) -> Self {
        Self { config, sessions: SyncMutex::new(HashMap::new()), next_id: AtomicU64::new(1) }
    }

    pub fn config(&self) -> ServiceConfig {
        self.config
    }

    pub fn get(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.sessions.lock().expect("session map").get(id).cloned().ok_or_else(|| ApiError::UnknownSession(id.to_string()))
    }

    pub async fn create(&self, req: CreateRequest) -> Result<CreateResponse, ApiError> {
        if self.sessions.lock().expect("session map").len() >= self.config.max_sessions {
            return Err(ApiError::Capacity(self.config.max_sessions));
        }
        let CreateRequest { dataset, params, seed } = req;
        params.optimizer.validate().map_err(|e| ApiError::Params(e.to_string()))?;
        let id = format!("s{}", self.next_id.fetch_add(1, Ordering::Relaxed));
        let max_points = self.config.max_points;
        let sid = id.clone();
        let p = params.clone();
        // graph construction and spectral init are too heavy for the async runtime
        let built = tokio::task::spawn_blocking(move || -> Result<_, ApiError> {
            let ds = load_dataset(dataset)?;
            if ds.n_points() > max_points {
                return Err(ApiError::TooManyPoints { points: ds.n_points(), limit: max_points });
            }
            let graph = build_graph(ds.features().view(), p.n_neighbors.min(ds.n_points().saturating_sub(1)))
                .map_err(|e| ApiError::Dataset(e.to_string()))?;
            let (state, _) = init_layout(&graph, p.init, seed, p.optimizer.curve())
                .map_err(|e| ApiError::Dataset(e.to_string()))?;
            let cs = p.constraint_set(ds.n_points());
            let loss = total_loss(state.coords.view(), &graph, &cs, state.curve_a, state.curve_b);
            let frame = FrameRecord::new(&sid, state.epoch, state.coords.view(), loss);
            Ok((ds, graph, state, cs, frame))
        })
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
        let (ds, graph, state, cs, frame) = built;

        let session = Arc::new(Session {
            id: id.clone(),
            ids: ds.id_index(),
            dataset: Arc::new(ds),
            graph: Arc::new(graph),
            params,
            inner: Mutex::new(Inner { state, constraints: cs, run: None, clusters: None, error: None }),
            frames: Arc::new(watch::Sender::new(Arc::new(frame.clone()))),
            status: Arc::new(watch::Sender::new(Status::Idle)),
        });
        {
            let mut sessions = self.sessions.lock().expect("session map");
            if sessions.len() >= self.config.max_sessions {
                return Err(ApiError::Capacity(self.config.max_sessions));
            }
            sessions.insert(id.clone(), session.clone());
        }
        let status = {
            let mut inner = session.inner.lock().await;
            if session.params.optimizer.epochs > 0 {
                session.spawn(&mut inner, false);
            }
            session.status()
        };
        tracing::info!(session = %id, n = session.n_points(), "session created");
        Ok(CreateResponse { session_id: id, n_points: session.n_points(), status, initial_frame: frame })
    }

    pub async fn delete(&self, id: &str) -> Result<(), ApiError> {
        let session = self
            .sessions
            .lock()
            .expect("session map")
            .remove(id)
            .ok_or_else(|| ApiError::UnknownSession(id.to_string()))?;
        session.shutdown().await;
        tracing::info!(session = %id, "session deleted");
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ipbc_core::{BlobSpec, ConstraintKind};

    fn blobs(epochs: usize) -> CreateRequest {
        let mut params = PipelineParams::default();
        params.optimizer.epochs = epochs;
        CreateRequest {
            dataset: DatasetSource::Blobs(BlobSpec { n_per_cluster: 25, d: 4, k: 2, ..Default::default() }),
            params,
            seed: 0,
        }
    }

    #[tokio::test]
    async fn zero_epochs_is_idle_at_once() {
        let m = SessionManager::new(ServiceConfig::default());
        let r = m.create(blobs(0)).await.unwrap();
        assert_eq!(r.status, Status::Idle);
        assert_eq!(r.initial_frame.epoch, 0);
        assert_eq!(r.initial_frame.coords.len(), 50);
        let s = m.get(&r.session_id).unwrap();
        assert_eq!(*s.subscribe().borrow(), Arc::new(r.initial_frame));
    }

    #[tokio::test]
    async fn capacity_is_enforced() {
        let m = SessionManager::new(ServiceConfig { max_sessions: 1, ..Default::default() });
        m.create(blobs(0)).await.unwrap();
        assert!(matches!(m.create(blobs(0)).await, Err(ApiError::Capacity(1))));
    }

    #[tokio::test]
    async fn submit_cancels_and_continues_from_same_coords() {
        let m = SessionManager::new(ServiceConfig::default());
        let r = m.create(blobs(100_000)).await.unwrap();
        let s = m.get(&r.session_id).unwrap();
        let mut rx = s.subscribe();
        while rx.borrow_and_update().epoch == 0 {
            rx.changed().await.unwrap();
        }
        let rec = WireConstraint { kind: ConstraintKind::CannotLink, i: 0, j: 1, weight: 1.0 };
        let out = s.submit(vec![rec]).await.unwrap();
        assert!(out.restarted);
        {
            let inner = s.inner.lock().await;
            // the restart started from the settled state of the cancelled run
            assert!(inner.state.epoch > 0 && inner.state.epoch < 100_000);
            assert_eq!(inner.constraints.len(), 1);
        }
        m.delete(&r.session_id).await.unwrap();
        assert!(m.get(&r.session_id).is_err());
    }

    #[tokio::test]
    async fn verdicts_report_reasons() {
        let m = SessionManager::new(ServiceConfig::default());
        let r = m.create(blobs(0)).await.unwrap();
        let s = m.get(&r.session_id).unwrap();
        let cl = WireConstraint { kind: ConstraintKind::CannotLink, i: 3, j: 4, weight: 1.0 };
        s.submit(vec![cl]).await.unwrap();
        let ml = WireConstraint { kind: ConstraintKind::MustLink, i: 4, j: 3, weight: 1.0 };
        let unknown = WireConstraint { i: 999, ..ml };
        let Err(ApiError::NothingAccepted(resp)) = s.submit(vec![ml, unknown]).await else { panic!("expected rejection") };
        assert_eq!(resp.verdicts[0].reason, Some(RejectReason::Conflict));
        assert_eq!(resp.verdicts[0].conflicting, Some(cl));
        assert_eq!(resp.verdicts[1].reason, Some(RejectReason::UnknownPoint));
    }
}
