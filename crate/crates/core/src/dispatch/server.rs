//! TCP front end for the planning service.
//!
//! One master thread owns all state. Connection readers and planner workers
//! only send events to it; it is also the only thread writing to sockets.

use std::collections::{BTreeSet, HashMap};
use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crate::density::DensityParams;
use crate::grid::GridMap;
use crate::router::DEFAULT_BETA;

use super::protocol::{self, Command, ErrorCode};
use super::{assign, Completed, Job, MasterState, RouteResponse, Sink, SubmitError, WorkerPool};
use super::DEFAULT_QUEUE_CAPACITY;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub workers: usize,
    pub beta: f64,
    pub density: DensityParams,
    pub queue_capacity: usize,
    /// Minimum spacing between density publishes while requests keep arriving.
    pub publish_interval: Duration,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            workers: 4,
            beta: DEFAULT_BETA,
            density: DensityParams::default(),
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            publish_interval: Duration::from_millis(100),
        }
    }
}

type ConnId = u64;

enum Event {
    Connected(ConnId, TcpStream),
    Line(ConnId, String),
    Closed(ConnId),
    Done(Completed),
    Shutdown,
}

/// Handle to a running server.
pub struct ServerHandle {
    addr: SocketAddr,
    events: Sender<Event>,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
    master: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the server stops.
    pub fn wait(mut self) {
        if let Some(m) = self.master.take() {
            let _ = m.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = self.events.send(Event::Shutdown);
        // wake the blocking accept
        let _ = TcpStream::connect(self.addr);
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        if let Some(m) = self.master.take() {
            let _ = m.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.master.is_some() {
            self.stop_now();
        }
    }
}

/// Binds `addr` and starts serving in background threads.
pub fn spawn(addr: impl ToSocketAddrs, map: Arc<GridMap>, config: ServerConfig) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    let (tx, rx) = mpsc::channel::<Event>();
    let stop = Arc::new(AtomicBool::new(false));

    let acceptor = {
        let tx = tx.clone();
        let stop = Arc::clone(&stop);
        thread::Builder::new()
            .name("accept".into())
            .spawn(move || accept_loop(listener, tx, stop))?
    };

    let sink_tx = Mutex::new(tx.clone());
    let sink: Sink = Arc::new(move |c| {
        let _ = sink_tx.lock().unwrap().send(Event::Done(c));
    });
    let pool = WorkerPool::new(
        config.workers.max(1),
        config.queue_capacity,
        Arc::clone(&map),
        config.beta,
        sink,
    );
    let state = MasterState::new(map, config.density, config.beta);
    let master = thread::Builder::new()
        .name("master".into())
        .spawn(move || Master::new(state, pool, config).run(rx))?;

    Ok(ServerHandle {
        addr: local,
        events: tx,
        stop,
        acceptor: Some(acceptor),
        master: Some(master),
    })
}

fn accept_loop(listener: TcpListener, tx: Sender<Event>, stop: Arc<AtomicBool>) {
    let mut next_id: ConnId = 1;
    for stream in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = stream else { continue };
        let id = next_id;
        next_id += 1;
        let Ok(writer) = stream.try_clone() else { continue };
        if tx.send(Event::Connected(id, writer)).is_err() {
            break;
        }
        let tx = tx.clone();
        let _ = thread::Builder::new()
            .name(format!("conn-{id}"))
            .spawn(move || {
                let reader = BufReader::new(stream);
                for line in reader.lines() {
                    match line {
                        Ok(l) => {
                            if tx.send(Event::Line(id, l)).is_err() {
                                return;
                            }
                        }
                        Err(_) => break,
                    }
                }
                let _ = tx.send(Event::Closed(id));
            });
    }
}

struct Master {
    state: MasterState,
    pool: WorkerPool,
    config: ServerConfig,
    conns: HashMap<ConnId, TcpStream>,
    subscribers: BTreeSet<ConnId>,
    pending: Vec<(ConnId, u64)>,
    in_flight: HashMap<u64, ConnId>,
    next_ticket: u64,
}

impl Master {
    fn new(state: MasterState, pool: WorkerPool, config: ServerConfig) -> Self {
        Self {
            state,
            pool,
            config,
            conns: HashMap::new(),
            subscribers: BTreeSet::new(),
            pending: Vec::new(),
            in_flight: HashMap::new(),
            next_ticket: 0,
        }
    }

    fn run(mut self, rx: Receiver<Event>) {
        while let Ok(ev) = rx.recv() {
            if !self.handle(ev) {
                return;
            }
            // drain whatever is already queued before serving a batch
            while let Ok(ev) = rx.try_recv() {
                if !self.handle(ev) {
                    return;
                }
            }
            self.flush_batch();
        }
    }

    fn send(&mut self, conn: ConnId, line: &str) {
        if let Some(s) = self.conns.get_mut(&conn) {
            let ok = s.write_all(line.as_bytes()).and_then(|_| s.write_all(b"\n"));
            if ok.is_err() {
                self.conns.remove(&conn);
                self.subscribers.remove(&conn);
            }
        }
    }

    fn handle(&mut self, ev: Event) -> bool {
        match ev {
            Event::Connected(id, stream) => {
                let _ = stream.set_nodelay(true);
                self.conns.insert(id, stream);
            }
            Event::Closed(id) => {
                self.conns.remove(&id);
                self.subscribers.remove(&id);
            }
            Event::Line(id, line) => self.on_line(id, &line),
            Event::Done(c) => {
                if let Some(conn) = self.in_flight.remove(&c.ticket) {
                    self.send(conn, &c.response.to_line());
                }
            }
            Event::Shutdown => return false,
        }
        true
    }

    fn on_line(&mut self, conn: ConnId, line: &str) {
        if line.trim().is_empty() {
            return;
        }
        match protocol::parse_command(line) {
            None => self.send(conn, &protocol::format_error(0, ErrorCode::Parse, "parse")),
            Some(Command::Pos { user, x, y }) => {
                if self.state.ingest_position(user, (x, y)).is_err() {
                    let msg = protocol::format_error(user, ErrorCode::OutOfBounds, "position outside the map");
                    self.send(conn, &msg);
                }
            }
            Some(Command::Plan { user }) => {
                if self.state.position(user).is_some() {
                    self.pending.push((conn, user));
                } else {
                    let msg = protocol::format_error(user, ErrorCode::UnknownUser, "unknown user");
                    self.send(conn, &msg);
                }
            }
            Some(Command::Bye { user }) => {
                self.state.remove_user(user);
            }
            Some(Command::SubDmap) => {
                self.subscribers.insert(conn);
            }
        }
    }

    fn maybe_publish(&mut self) {
        let due = match self.state.last_publish() {
            None => true,
            Some(t) => t.elapsed() >= self.config.publish_interval,
        };
        if self.state.is_dirty() && due {
            let snap = self.state.publish_snapshot();
            let line = protocol::format_dmap(snap.version());
            let subs: Vec<ConnId> = self.subscribers.iter().copied().collect();
            for s in subs {
                self.send(s, &line);
            }
        }
    }

    fn flush_batch(&mut self) {
        if self.pending.is_empty() {
            return;
        }
        self.maybe_publish();
        let snapshot = self.state.snapshot();
        let batch = std::mem::take(&mut self.pending);
        let mut jobs = Vec::with_capacity(batch.len());
        for (conn, user) in batch {
            // the user may have left between PLAN and this flush
            let Some(request) = self.state.request(user) else {
                let msg = protocol::format_error(user, ErrorCode::UnknownUser, "unknown user");
                self.send(conn, &msg);
                continue;
            };
            let ticket = self.next_ticket;
            self.next_ticket += 1;
            self.in_flight.insert(ticket, conn);
            jobs.push(Job {
                ticket,
                request,
                snapshot: Arc::clone(&snapshot),
            });
        }
        let queues = assign(&jobs, self.pool.workers()).expect("pool has workers");
        for (w, queue) in queues.into_iter().enumerate() {
            for job in queue {
                if let Err(SubmitError::Busy(job)) = self.pool.submit_to(w, job) {
                    let resp = RouteResponse::Error {
                        user_id: job.request.user_id,
                        code: ErrorCode::Busy,
                        message: "queue full, retry".into(),
                    };
                    if let Some(conn) = self.in_flight.remove(&job.ticket) {
                        self.send(conn, &resp.to_line());
                    }
                }
            }
        }
    }
}
