//! Line-protocol client and scripted session against a live server.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::sync::Arc;
use std::time::Duration;

use evac_core::dispatch::protocol::{parse_reply, Reply};
use evac_core::dispatch::server::{spawn, ServerConfig};
use evac_core::experiment::load_map;
use evac_core::{GridCoord, GridMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::data_path;

pub struct Client {
    writer: TcpStream,
    reader: BufReader<TcpStream>,
}

impl Client {
    pub fn connect(addr: std::net::SocketAddr) -> Self {
        let s = TcpStream::connect(addr).unwrap();
        s.set_read_timeout(Some(Duration::from_secs(20))).unwrap();
        Self {
            reader: BufReader::new(s.try_clone().unwrap()),
            writer: s,
        }
    }

    pub fn send(&mut self, line: &str) {
        self.writer.write_all(line.as_bytes()).unwrap();
        self.writer.write_all(b"\n").unwrap();
    }

    pub fn recv(&mut self) -> Reply {
        let mut line = String::new();
        self.reader.read_line(&mut line).expect("reply before timeout");
        parse_reply(line.trim_end()).unwrap_or_else(|| panic!("unparseable reply {line:?}"))
    }
}

pub fn positions(map: &GridMap, n: usize, seed: u64) -> Vec<(f64, f64)> {
    let free: Vec<GridCoord> = map.free_cells().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let c = free[rng.gen_range(0..free.len())];
            let (x, y) = map.cell_center(c);
            (x + rng.gen_range(-0.4..0.4), y + rng.gen_range(-0.4..0.4))
        })
        .collect()
}

pub fn check_route(map: &GridMap, cells: &[GridCoord]) {
    assert!(map.is_exit(*cells.last().unwrap()));
    for w in cells.windows(2) {
        assert!(map.neighbors(w[0]).unwrap().iter().any(|(n, _)| *n == w[1]), "{} -> {}", w[0], w[1]);
    }
}

/// Streams POS for every user, then PLAN for every user, and collects replies.
pub fn scripted_session(workers: usize) -> BTreeMap<u64, Vec<GridCoord>> {
    let map = Arc::new(load_map(&data_path("five_exit.map")).unwrap());
    let config = ServerConfig {
        workers,
        ..ServerConfig::default()
    };
    let server = spawn("127.0.0.1:0", Arc::clone(&map), config).unwrap();
    let mut client = Client::connect(server.local_addr());
    let pos = positions(&map, 100, 17);
    for (u, (x, y)) in pos.iter().enumerate() {
        client.send(&format!("POS {u} {x:.3} {y:.3}"));
    }
    for u in 0..pos.len() {
        client.send(&format!("PLAN {u}"));
    }
    let mut routes = BTreeMap::new();
    let mut versions = Vec::new();
    for _ in 0..pos.len() {
        match client.recv() {
            Reply::Route { user, version, cells } => {
                check_route(&map, &cells);
                let start = map.world_to_cell(pos[user as usize].0, pos[user as usize].1).unwrap();
                assert_eq!(cells[0], start);
                versions.push(version);
                assert!(routes.insert(user, cells).is_none(), "user {user} answered twice");
            }
            other => panic!("unexpected reply {other:?}"),
        }
    }
    versions.dedup();
    assert_eq!(versions.len(), 1, "one frozen snapshot serves the batch");
    server.shutdown();
    routes
}
