use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};

use crate::density::DensityMap;
use crate::grid::GridMap;
use crate::router::{plan_route, PlanError};

use super::protocol::ErrorCode;
use super::{RouteRequest, RouteResponse};

pub const DEFAULT_QUEUE_CAPACITY: usize = 4096;

/// A planning job bound to the snapshot that was current when it was assigned.
#[derive(Debug, Clone)]
pub struct Job {
    pub ticket: u64,
    pub request: RouteRequest,
    pub snapshot: Arc<DensityMap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completed {
    pub ticket: u64,
    pub response: RouteResponse,
}

/// Receives finished jobs. Called from worker threads.
pub type Sink = Arc<dyn Fn(Completed) + Send + Sync>;

#[derive(Debug)]
pub enum SubmitError {
    /// The queue is full and holds no older request from the same user.
    Busy(Job),
}

#[derive(Default)]
struct QueueState {
    jobs: VecDeque<Job>,
    held: bool,
    closed: bool,
}

#[derive(Default)]
struct WorkerQueue {
    state: Mutex<QueueState>,
    ready: Condvar,
}

/// Fixed set of long-lived planning workers, one FIFO queue each.
pub struct WorkerPool {
    queues: Vec<Arc<WorkerQueue>>,
    handles: Vec<JoinHandle<()>>,
    capacity: usize,
    sink: Sink,
}

impl WorkerPool {
    pub fn new(workers: usize, capacity: usize, map: Arc<GridMap>, beta: f64, sink: Sink) -> Self {
        assert!(workers >= 1, "worker pool needs at least one worker");
        let queues: Vec<Arc<WorkerQueue>> = (0..workers).map(|_| Arc::default()).collect();
        let handles = queues
            .iter()
            .enumerate()
            .map(|(i, q)| {
                let q = Arc::clone(q);
                let map = Arc::clone(&map);
                let sink = Arc::clone(&sink);
                thread::Builder::new()
                    .name(format!("planner-{i}"))
                    .spawn(move || worker_loop(&q, &map, beta, &*sink))
                    .expect("spawn planner thread")
            })
            .collect();
        Self {
            queues,
            handles,
            capacity: capacity.max(1),
            sink,
        }
    }

    pub fn workers(&self) -> usize {
        self.queues.len()
    }

    pub fn queue_len(&self, worker: usize) -> usize {
        self.queues[worker].state.lock().unwrap().jobs.len()
    }

    /// Stops workers from taking new jobs until [`resume`](Self::resume).
    pub fn hold(&self) {
        for q in &self.queues {
            q.state.lock().unwrap().held = true;
        }
    }

    pub fn resume(&self) {
        for q in &self.queues {
            q.state.lock().unwrap().held = false;
            q.ready.notify_all();
        }
    }

    /// Queues a job on one worker.
    ///
    /// On a full queue the oldest pending job of the same user is dropped and
    /// answered as superseded; with no such job the submission is refused.
    pub fn submit_to(&self, worker: usize, job: Job) -> Result<(), SubmitError> {
        let q = &self.queues[worker];
        let mut st = q.state.lock().unwrap();
        let mut shed = None;
        if st.jobs.len() >= self.capacity {
            let user = job.request.user_id;
            match st.jobs.iter().position(|j| j.request.user_id == user) {
                Some(i) => shed = st.jobs.remove(i),
                None => return Err(SubmitError::Busy(job)),
            }
        }
        st.jobs.push_back(job);
        drop(st);
        q.ready.notify_one();
        if let Some(old) = shed {
            (self.sink)(Completed {
                ticket: old.ticket,
                response: RouteResponse::Error {
                    user_id: old.request.user_id,
                    code: ErrorCode::Superseded,
                    message: "superseded by a newer request".into(),
                },
            });
        }
        Ok(())
    }
}

impl Drop for WorkerPool {
    fn drop(&mut self) {
        for q in &self.queues {
            let mut st = q.state.lock().unwrap();
            st.closed = true;
            st.held = false;
            q.ready.notify_all();
        }
        for h in self.handles.drain(..) {
            let _ = h.join();
        }
    }
}

fn worker_loop(q: &WorkerQueue, map: &GridMap, beta: f64, sink: &(dyn Fn(Completed) + Send + Sync)) {
    loop {
        let job = {
            let mut st = q.state.lock().unwrap();
            loop {
                if !st.held {
                    if let Some(job) = st.jobs.pop_front() {
                        break job;
                    }
                    if st.closed {
                        return;
                    }
                }
                st = q.ready.wait(st).unwrap();
            }
        };
        let response = run_job(map, beta, &job);
        sink(Completed {
            ticket: job.ticket,
            response,
        });
    }
}

/// Plans one request against its bound snapshot.
pub fn run_job(map: &GridMap, beta: f64, job: &Job) -> RouteResponse {
    let req = &job.request;
    let user_id = req.user_id;
    let Some(cell) = map.world_to_cell(req.src.0, req.src.1) else {
        return RouteResponse::Error {
            user_id,
            code: ErrorCode::OutOfBounds,
            message: "position outside the map".into(),
        };
    };
    match plan_route(map, &job.snapshot, cell, map.exits(), beta) {
        Ok(route) => RouteResponse::Route {
            user_id,
            version: job.snapshot.version(),
            route,
        },
        Err(PlanError::NoRoute(_)) => RouteResponse::Error {
            user_id,
            code: ErrorCode::NoRoute,
            message: "no route".into(),
        },
        Err(e) => RouteResponse::Error {
            user_id,
            code: ErrorCode::NoRoute,
            message: format!("no route: {e}"),
        },
    }
}
