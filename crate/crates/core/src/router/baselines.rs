//! Classic planners used as comparison points for the single-pass search.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::density::DensityMap;
use crate::grid::{GridCoord, GridMap};

use super::{blend, check_inputs, plan_route_with, PlanError, PlannerConfig, Route, SearchStats};

/// One single-destination A* per exit; keeps the cheapest result.
pub fn plan_repeated_astar(
    map: &GridMap,
    dmap: &DensityMap,
    src: GridCoord,
    dsts: &[GridCoord],
    config: &PlannerConfig,
) -> Result<(Route, SearchStats), PlanError> {
    check_inputs(map, dmap, src, dsts, config.beta)?;
    let mut stats = SearchStats::default();
    let mut best: Option<Route> = None;
    for &dst in dsts {
        match plan_route_with(map, dmap, src, &[dst], config) {
            Ok((route, s)) => {
                stats.absorb(s);
                if best.as_ref().is_none_or(|b| route.total_cost < b.total_cost) {
                    best = Some(route);
                }
            }
            Err(PlanError::NoRoute(_)) => {}
            Err(e) => return Err(e),
        }
    }
    best.map(|r| (r, stats)).ok_or(PlanError::NoRoute(src))
}

#[derive(Clone, Copy, PartialEq)]
struct Item {
    cost: f64,
    index: usize,
}

impl Eq for Item {}

impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Exhaustive Dijkstra over the whole map, then the cheapest exit.
pub fn plan_dijkstra(
    map: &GridMap,
    dmap: &DensityMap,
    src: GridCoord,
    dsts: &[GridCoord],
    beta: f64,
) -> Result<(Route, SearchStats), PlanError> {
    check_inputs(map, dmap, src, dsts, beta)?;
    let n = map.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    let mut stats = SearchStats::default();

    let s = map.index(src);
    dist[s] = 0.0;
    heap.push(Item { cost: 0.0, index: s });
    stats.insertions += 1;
    while let Some(Item { cost, index }) = heap.pop() {
        if cost > dist[index] {
            continue;
        }
        stats.expansions += 1;
        map.for_each_neighbor(map.coord(index), |nb, d| {
            let j = map.index(nb);
            let next = cost + blend(beta, d, dmap.at(nb));
            if next < dist[j] {
                dist[j] = next;
                parent[j] = index;
                heap.push(Item { cost: next, index: j });
                stats.insertions += 1;
            }
        });
    }

    let mut best: Option<(f64, GridCoord)> = None;
    for &d in dsts {
        let c = dist[map.index(d)];
        if c.is_finite() && best.is_none_or(|(b, _)| c < b) {
            best = Some((c, d));
        }
    }
    let (total_cost, exit) = best.ok_or(PlanError::NoRoute(src))?;
    let mut cells = vec![exit];
    let mut at = map.index(exit);
    while at != s {
        at = parent[at];
        cells.push(map.coord(at));
    }
    cells.reverse();
    Ok((
        Route {
            cells,
            chosen_exit: exit,
            total_cost,
        },
        stats,
    ))
}
