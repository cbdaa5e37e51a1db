//! Parallel asynchronous planning service.
//!
//! The master owns user positions and publishes immutable, versioned density
//! snapshots. Route requests are spread round-robin over a fixed set of
//! workers; each job carries the snapshot that was current when it was
//! assigned, so later publishes never affect it. Finished jobs flow back over
//! a channel.

mod pool;
pub mod protocol;
pub mod server;

use std::collections::BTreeMap;
use std::sync::mpsc;
use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

use crate::density::{DensityBuilder, DensityMap, DensityParams};
use crate::grid::GridMap;
use crate::router::Route;

pub use pool::{run_job, Completed, Job, Sink, SubmitError, WorkerPool, DEFAULT_QUEUE_CAPACITY};
pub use protocol::ErrorCode;

#[derive(Debug, Error, PartialEq)]
pub enum DispatchError {
    #[error("position ({x}, {y}) is outside the map")]
    OutOfBounds { x: f64, y: f64 },
    #[error("at least one worker is required")]
    NoWorkers,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouteRequest {
    pub user_id: u64,
    /// Source position in meters.
    pub src: (f64, f64),
    /// Snapshot version current when the request was made.
    pub requested_at: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RouteResponse {
    Route {
        user_id: u64,
        version: u64,
        route: Route,
    },
    Error {
        user_id: u64,
        code: ErrorCode,
        message: String,
    },
}

impl RouteResponse {
    pub fn user_id(&self) -> u64 {
        match self {
            RouteResponse::Route { user_id, .. } | RouteResponse::Error { user_id, .. } => *user_id,
        }
    }

    pub fn route(&self) -> Option<&Route> {
        match self {
            RouteResponse::Route { route, .. } => Some(route),
            RouteResponse::Error { .. } => None,
        }
    }

    /// The wire form of this response.
    pub fn to_line(&self) -> String {
        match self {
            RouteResponse::Route {
                user_id,
                version,
                route,
            } => protocol::format_route(*user_id, *version, route),
            RouteResponse::Error {
                user_id,
                code,
                message,
            } => protocol::format_error(*user_id, *code, message),
        }
    }
}

/// User positions plus the current density snapshot. Single writer.
#[derive(Debug)]
pub struct MasterState {
    map: Arc<GridMap>,
    beta: f64,
    users: BTreeMap<u64, (f64, f64)>,
    builder: DensityBuilder,
    snapshot: Arc<DensityMap>,
    dirty: bool,
    last_publish: Option<Instant>,
}

impl MasterState {
    pub fn new(map: Arc<GridMap>, params: DensityParams, beta: f64) -> Self {
        let snapshot = Arc::new(DensityMap::zeros(map.width(), map.height(), params));
        Self {
            map,
            beta,
            users: BTreeMap::new(),
            builder: DensityBuilder::new(params),
            snapshot,
            dirty: false,
            last_publish: None,
        }
    }

    pub fn map(&self) -> &Arc<GridMap> {
        &self.map
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn users(&self) -> usize {
        self.users.len()
    }

    pub fn position(&self, user: u64) -> Option<(f64, f64)> {
        self.users.get(&user).copied()
    }

    pub fn is_dirty(&self) -> bool {
        self.dirty
    }

    pub fn last_publish(&self) -> Option<Instant> {
        self.last_publish
    }

    /// Records a user's latest position.
    pub fn ingest_position(&mut self, user: u64, pos: (f64, f64)) -> Result<(), DispatchError> {
        if self.map.world_to_cell(pos.0, pos.1).is_none() {
            return Err(DispatchError::OutOfBounds { x: pos.0, y: pos.1 });
        }
        self.users.insert(user, pos);
        self.dirty = true;
        Ok(())
    }

    pub fn remove_user(&mut self, user: u64) -> bool {
        let removed = self.users.remove(&user).is_some();
        self.dirty |= removed;
        removed
    }

    /// Latest published snapshot.
    pub fn snapshot(&self) -> Arc<DensityMap> {
        Arc::clone(&self.snapshot)
    }

    /// Rebuilds the density field from all current positions under a new version.
    pub fn publish_snapshot(&mut self) -> Arc<DensityMap> {
        let positions: Vec<(f64, f64)> = self.users.values().copied().collect();
        let dmap = self
            .builder
            .rebuild_from_positions(&positions, &self.map)
            .expect("stored positions are validated on ingest");
        self.snapshot = Arc::new(dmap);
        self.dirty = false;
        self.last_publish = Some(Instant::now());
        self.snapshot()
    }

    /// A request for a known user, stamped with the current snapshot version.
    pub fn request(&self, user: u64) -> Option<RouteRequest> {
        self.position(user).map(|src| RouteRequest {
            user_id: user,
            src,
            requested_at: self.snapshot.version(),
        })
    }
}

/// Round-robin split of `requests` over `workers` queues, in arrival order.
pub fn assign<T: Clone>(requests: &[T], workers: usize) -> Result<Vec<Vec<T>>, DispatchError> {
    if workers == 0 {
        return Err(DispatchError::NoWorkers);
    }
    let mut queues = vec![Vec::with_capacity(requests.len() / workers + 1); workers];
    for (i, r) in requests.iter().enumerate() {
        queues[i % workers].push(r.clone());
    }
    Ok(queues)
}

/// A worker pool whose results are collected back on the calling thread.
pub struct Dispatcher {
    pool: WorkerPool,
    results: mpsc::Receiver<Completed>,
    next_ticket: u64,
}

impl Dispatcher {
    pub fn new(map: Arc<GridMap>, beta: f64, workers: usize) -> Result<Self, DispatchError> {
        Self::with_capacity(map, beta, workers, DEFAULT_QUEUE_CAPACITY)
    }

    pub fn with_capacity(
        map: Arc<GridMap>,
        beta: f64,
        workers: usize,
        capacity: usize,
    ) -> Result<Self, DispatchError> {
        if workers == 0 {
            return Err(DispatchError::NoWorkers);
        }
        let (tx, rx) = mpsc::channel();
        let tx = std::sync::Mutex::new(tx);
        let sink: Sink = Arc::new(move |c| {
            let _ = tx.lock().unwrap().send(c);
        });
        Ok(Self {
            pool: WorkerPool::new(workers, capacity, map, beta, sink),
            results: rx,
            next_ticket: 0,
        })
    }

    pub fn workers(&self) -> usize {
        self.pool.workers()
    }

    pub fn pool(&self) -> &WorkerPool {
        &self.pool
    }

    /// Plans every request against `snapshot`. Responses come back in request order.
    pub fn serve(&mut self, snapshot: &Arc<DensityMap>, requests: &[RouteRequest]) -> Vec<RouteResponse> {
        let base = self.next_ticket;
        self.next_ticket += requests.len() as u64;
        let tickets: Vec<(u64, RouteRequest)> = requests
            .iter()
            .enumerate()
            .map(|(i, r)| (base + i as u64, *r))
            .collect();
        let queues = assign(&tickets, self.pool.workers()).expect("pool has workers");

        let mut out: Vec<Option<RouteResponse>> = vec![None; requests.len()];
        let mut pending = requests.len();
        for (w, queue) in queues.into_iter().enumerate() {
            for (ticket, request) in queue {
                let job = Job {
                    ticket,
                    request,
                    snapshot: Arc::clone(snapshot),
                };
                if let Err(SubmitError::Busy(job)) = self.pool.submit_to(w, job) {
                    out[(job.ticket - base) as usize] = Some(RouteResponse::Error {
                        user_id: job.request.user_id,
                        code: ErrorCode::Busy,
                        message: "queue full, retry".into(),
                    });
                    pending -= 1;
                }
            }
        }
        while pending > 0 {
            let done = self.results.recv().expect("planner workers exited");
            let slot = &mut out[(done.ticket - base) as usize];
            if slot.is_none() {
                pending -= 1;
            }
            *slot = Some(done.response);
        }
        out.into_iter().map(|r| r.expect("every request answered")).collect()
    }
}

/// Publishes if needed, then plans `requests` on `workers` threads.
pub fn serve_queries(
    state: &mut MasterState,
    requests: &[RouteRequest],
    workers: usize,
) -> Result<Vec<RouteResponse>, DispatchError> {
    if state.is_dirty() || state.last_publish().is_none() {
        state.publish_snapshot();
    }
    let mut dispatcher = Dispatcher::new(Arc::clone(state.map()), state.beta(), workers)?;
    Ok(dispatcher.serve(&state.snapshot(), requests))
}
