//! Independent reference implementations and instance generators shared by
//! the integration tests. Nothing here calls into the planner or the density
//! builder; the oracles are written from the definitions alone.
#![allow(dead_code)]

pub mod client;

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::{PI, SQRT_2};
use std::path::PathBuf;

use evac_core::{CellKind, DensityMap, DensityParams, GridCoord, GridMap, PopulationCounts};
use rand::seq::SliceRandom;
use rand::Rng;

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

/// Naive density: every cell against every occupied cell, patch cutoff by
/// Chebyshev distance. Sources are visited in reading order.
pub fn oracle_density(map: &GridMap, counts: &PopulationCounts, params: DensityParams) -> Vec<f64> {
    let (w, h) = (map.width(), map.height());
    let mut sources: Vec<(GridCoord, u32)> = counts.iter().collect();
    sources.sort_by_key(|(c, _)| (c.y, c.x));
    let r = params.patch_radius;
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for &(s, n) in &sources {
                let dx = x.abs_diff(s.x);
                let dy = y.abs_diff(s.y);
                if dx.max(dy) > r {
                    continue;
                }
                let d2 = (dx * dx + dy * dy) as f64;
                acc += (params.gamma * n as f64 / (2.0 * PI).sqrt()) * (-d2 / 2.0).exp();
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn passable(map: &GridMap, x: isize, y: isize) -> bool {
    x >= 0
        && y >= 0
        && (x as usize) < map.width()
        && (y as usize) < map.height()
        && map.kind(GridCoord::new(x as usize, y as usize)) != Some(CellKind::Wall)
}

/// Eight-connected moves; a diagonal is blocked only when both orthogonal
/// cells it squeezes between are walls.
pub fn oracle_moves(map: &GridMap, c: GridCoord) -> Vec<(GridCoord, f64)> {
    let (x, y) = (c.x as isize, c.y as isize);
    let mut out = Vec::with_capacity(8);
    for dy in -1isize..=1 {
        for dx in -1isize..=1 {
            if (dx, dy) == (0, 0) || !passable(map, x + dx, y + dy) {
                continue;
            }
            let diagonal = dx != 0 && dy != 0;
            if diagonal && !passable(map, x + dx, y) && !passable(map, x, y + dy) {
                continue;
            }
            let len = if diagonal { SQRT_2 } else { 1.0 };
            out.push((GridCoord::new((x + dx) as usize, (y + dy) as usize), len));
        }
    }
    out
}

#[derive(PartialEq)]
struct Entry {
    key: f64,
    g: f64,
    cell: GridCoord,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.key.total_cmp(&self.key)
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn step(dmap: &DensityMap, s: GridCoord, len: f64, beta: f64) -> f64 {
    let rho = dmap.query(s).expect("density covers the map");
    beta * len + (1.0 - beta) * rho
}

/// Textbook A* towards one destination with a β-scaled straight-line estimate.
pub fn oracle_astar(map: &GridMap, dmap: &DensityMap, src: GridCoord, dst: GridCoord, beta: f64) -> Option<f64> {
    let w = map.width();
    let est = |c: GridCoord| {
        let dx = c.x as f64 - dst.x as f64;
        let dy = c.y as f64 - dst.y as f64;
        beta * (dx * dx + dy * dy).sqrt()
    };
    let mut best = vec![f64::INFINITY; w * map.height()];
    let mut done = vec![false; w * map.height()];
    let mut heap = BinaryHeap::new();
    best[src.y * w + src.x] = 0.0;
    heap.push(Entry {
        key: est(src),
        g: 0.0,
        cell: src,
    });
    while let Some(Entry { g, cell, .. }) = heap.pop() {
        let i = cell.y * w + cell.x;
        if done[i] {
            continue;
        }
        done[i] = true;
        if cell == dst {
            return Some(g);
        }
        for (n, len) in oracle_moves(map, cell) {
            let j = n.y * w + n.x;
            let ng = g + step(dmap, n, len, beta);
            if !done[j] && ng < best[j] {
                best[j] = ng;
                heap.push(Entry {
                    key: ng + est(n),
                    g: ng,
                    cell: n,
                });
            }
        }
    }
    None
}

/// Cheapest cost over all destinations, one A* per destination.
pub fn oracle_best_exit(
    map: &GridMap,
    dmap: &DensityMap,
    src: GridCoord,
    dsts: &[GridCoord],
    beta: f64,
) -> Option<f64> {
    dsts.iter()
        .filter_map(|&d| oracle_astar(map, dmap, src, d, beta))
        .min_by(f64::total_cmp)
}

/// Geometric shortest distance from `src` to every cell (infinity if unreachable).
pub fn oracle_dijkstra(map: &GridMap, src: GridCoord) -> Vec<f64> {
    let w = map.width();
    let mut dist = vec![f64::INFINITY; w * map.height()];
    let mut heap = BinaryHeap::new();
    dist[src.y * w + src.x] = 0.0;
    heap.push(Entry {
        key: 0.0,
        g: 0.0,
        cell: src,
    });
    while let Some(Entry { g, cell, .. }) = heap.pop() {
        if g > dist[cell.y * w + cell.x] {
            continue;
        }
        for (n, len) in oracle_moves(map, cell) {
            let j = n.y * w + n.x;
            if g + len < dist[j] {
                dist[j] = g + len;
                heap.push(Entry {
                    key: g + len,
                    g: g + len,
                    cell: n,
                });
            }
        }
    }
    dist
}

/// One randomly generated routing problem.
pub struct Instance {
    pub map: GridMap,
    pub dmap: DensityMap,
    pub src: GridCoord,
    pub beta: f64,
    pub zero_density: bool,
}

pub const BETAS: [f64; 4] = [0.0, 0.3, 0.5, 1.0];

/// Random map up to `max_side`×`max_side` with 1–5 exits, scattered walls,
/// a random crowd and a random passable source.
pub fn random_instance<R: Rng>(rng: &mut R, max_side: usize, beta: f64) -> Instance {
    let w = rng.gen_range(4..=max_side);
    let h = rng.gen_range(4..=max_side);
    let mut cells: Vec<GridCoord> = (0..h).flat_map(|y| (0..w).map(move |x| GridCoord::new(x, y))).collect();
    cells.shuffle(rng);
    let n_exits = rng.gen_range(1..=5);
    let exits: Vec<GridCoord> = cells[..n_exits].to_vec();
    let wall_frac = rng.gen_range(0.0..0.35);
    let n_walls = ((cells.len() - n_exits - 1) as f64 * wall_frac) as usize;
    let walls: Vec<GridCoord> = cells[n_exits..n_exits + n_walls].to_vec();
    let map = GridMap::open(w, h, &exits)
        .and_then(|m| m.with_walls(&walls))
        .expect("valid random map");
    let free: Vec<GridCoord> = cells[n_exits + n_walls..].to_vec();
    let src = free[rng.gen_range(0..free.len())];

    let zero_density = rng.gen_bool(0.25);
    let mut counts = PopulationCounts::for_map(&map);
    if !zero_density {
        let agents = rng.gen_range(1..=(w * h / 4).max(1));
        for _ in 0..agents {
            let c = free[rng.gen_range(0..free.len())];
            counts.add(c, 1).unwrap();
        }
    }
    let dmap = evac_core::build_density(&counts, &map, DensityParams::default()).unwrap();
    Instance {
        map,
        dmap,
        src,
        beta,
        zero_density,
    }
}

/// Random population of up to `max_agents` on a `w`×`h` open map.
pub fn random_counts<R: Rng>(rng: &mut R, map: &GridMap, max_agents: usize) -> PopulationCounts {
    let mut counts = PopulationCounts::for_map(map);
    let agents = rng.gen_range(0..=max_agents);
    for _ in 0..agents {
        let c = GridCoord::new(rng.gen_range(0..map.width()), rng.gen_range(0..map.height()));
        counts.add(c, 1).unwrap();
    }
    counts
}
