//! Congestion-aware routing to the best of several exits.
//!
//! [`plan_route`] runs a single A* search that considers every destination at
//! once: each successor is scored against every exit and the open list keeps,
//! per position, the entry with the lowest `f`. The first exit popped from the
//! open list is the cheapest one to reach. Step costs blend distance with the
//! density at the cell being entered:
//!
//! ```text
//! cost(p -> s) = beta * dist(p, s) + (1 - beta) * rho[s]
//! ```
//!
//! The heuristic is `beta * euclid(s, dst)`, which never exceeds the true cost
//! since the density term is non-negative.

mod baselines;
mod frontier;

use std::cell::RefCell;
use std::f64::consts::SQRT_2;

use thiserror::Error;

use crate::density::DensityMap;
use crate::grid::{GridCoord, GridError, GridMap};

pub use baselines::{plan_dijkstra, plan_repeated_astar};
pub use frontier::FrontierLists;

pub const DEFAULT_BETA: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("beta must lie in [0, 1], got {0}")]
    BadBeta(f64),
    #[error("density map is {found:?}, grid is {expected:?}")]
    DensityMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("{0} and {1} are not adjacent")]
    NotAdjacent(GridCoord, GridCoord),
    #[error("no route from {0} to any destination")]
    NoRoute(GridCoord),
    #[error("broken parent chain at {0}")]
    BrokenChain(GridCoord),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeuristicMode {
    /// `beta * euclid`: admissible and consistent for every beta.
    #[default]
    Scaled,
    /// Plain Euclidean distance. Overestimates when beta < 1.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerConfig {
    pub beta: f64,
    pub heuristic: HeuristicMode,
    /// Record the f-value of every expanded node in [`SearchStats::popped_f`].
    pub trace_pops: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            heuristic: HeuristicMode::Scaled,
            trace_pops: false,
        }
    }
}

impl PlannerConfig {
    pub fn with_beta(beta: f64) -> Self {
        Self {
            beta,
            ..Self::default()
        }
    }

    pub fn traced(mut self) -> Self {
        self.trace_pops = true;
        self
    }
}

/// A search node. `g` is the accumulated cost from the source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanNode {
    pub pos: GridCoord,
    pub parent: Option<GridCoord>,
    pub dst: GridCoord,
    pub g: f64,
    pub h: f64,
    pub f: f64,
}

impl PlanNode {
    pub fn new(pos: GridCoord, parent: Option<GridCoord>, dst: GridCoord, g: f64, h: f64) -> Self {
        Self {
            pos,
            parent,
            dst,
            g,
            h,
            f: g + h,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    /// Source first, chosen exit last.
    pub cells: Vec<GridCoord>,
    pub chosen_exit: GridCoord,
    pub total_cost: f64,
}

impl Route {
    pub fn source(&self) -> GridCoord {
        self.cells[0]
    }

    /// Number of moves along the route.
    pub fn steps(&self) -> usize {
        self.cells.len() - 1
    }

    /// Euclidean length in cell units.
    pub fn length(&self) -> f64 {
        self.cells
            .windows(2)
            .map(|w| step_length(w[0], w[1]).unwrap_or(f64::NAN))
            .sum()
    }

    /// Checks the route against the map without consulting any search state.
    pub fn check(
        &self,
        map: &GridMap,
        dmap: &DensityMap,
        beta: f64,
        dsts: &[GridCoord],
    ) -> Result<(), String> {
        let Some(&last) = self.cells.last() else {
            return Err("empty route".into());
        };
        if last != self.chosen_exit {
            return Err(format!("route ends at {last}, exit is {}", self.chosen_exit));
        }
        if !dsts.contains(&self.chosen_exit) {
            return Err(format!("{} is not a destination", self.chosen_exit));
        }
        let mut cost = 0.0;
        for w in self.cells.windows(2) {
            if !map.is_passable(w[1]) || !map.is_passable(w[0]) {
                return Err(format!("route crosses a wall near {}", w[1]));
            }
            let ok = map
                .neighbors(w[0])
                .map(|n| n.iter().any(|(c, _)| *c == w[1]))
                .unwrap_or(false);
            if !ok {
                return Err(format!("{} -> {} is not a legal step", w[0], w[1]));
            }
            cost += edge_cost(w[0], w[1], dmap, beta).map_err(|e| e.to_string())?;
        }
        if (cost - self.total_cost).abs() > 1e-9 {
            return Err(format!(
                "total_cost {} but edges sum to {cost}",
                self.total_cost
            ));
        }
        Ok(())
    }
}

/// Counters collected during a search.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchStats {
    /// Nodes popped from the open list and expanded (the goal pop included).
    pub expansions: usize,
    pub insertions: usize,
    pub popped_f: Vec<f64>,
}

impl SearchStats {
    pub fn absorb(&mut self, other: SearchStats) {
        self.expansions += other.expansions;
        self.insertions += other.insertions;
        self.popped_f.extend(other.popped_f);
    }
}

fn step_length(p: GridCoord, s: GridCoord) -> Option<f64> {
    match (p.x.abs_diff(s.x), p.y.abs_diff(s.y)) {
        (1, 0) | (0, 1) => Some(1.0),
        (1, 1) => Some(SQRT_2),
        _ => None,
    }
}

#[inline]
pub(crate) fn blend(beta: f64, dist: f64, rho: f64) -> f64 {
    beta * dist + (1.0 - beta) * rho
}

/// Cost of stepping from `p` onto the adjacent cell `s`.
pub fn edge_cost(p: GridCoord, s: GridCoord, dmap: &DensityMap, beta: f64) -> Result<f64, PlanError> {
    let dist = step_length(p, s).ok_or(PlanError::NotAdjacent(p, s))?;
    let rho = dmap.query(s).map_err(|_| GridError::OutOfBounds(s))?;
    Ok(blend(beta, dist, rho))
}

/// Scaled Euclidean distance from `s` to `dst`.
pub fn heuristic(s: GridCoord, dst: GridCoord, beta: f64) -> f64 {
    beta * euclid(s, dst)
}

#[inline]
fn euclid(a: GridCoord, b: GridCoord) -> f64 {
    let dx = a.x.abs_diff(b.x) as f64;
    let dy = a.y.abs_diff(b.y) as f64;
    (dx * dx + dy * dy).sqrt()
}

#[inline]
fn heuristic_for(mode: HeuristicMode, s: GridCoord, dst: GridCoord, beta: f64) -> f64 {
    match mode {
        HeuristicMode::Scaled => heuristic(s, dst, beta),
        HeuristicMode::Raw => euclid(s, dst),
    }
}

/// Whether `s` should enter the open list.
///
/// An open entry at the same position admits `s` only if that entry has a
/// higher `f`; a closed position is reopened only for a strictly lower `g`;
/// an unseen position is always admitted.
pub fn validate_candidate(s: &PlanNode, lists: &FrontierLists) -> bool {
    if let Some(open) = lists.open_entry(s.pos) {
        return open.f > s.f;
    }
    if let Some(g) = lists.closed_cost(s.pos) {
        return g > s.g;
    }
    true
}

/// Rebuilds the route ending at `goal` by following closed-list parents.
pub fn trace_path(goal: &PlanNode, lists: &FrontierLists) -> Result<Route, PlanError> {
    let (w, h) = lists.dims();
    let mut cells = vec![goal.pos];
    let mut next = goal.parent;
    while let Some(p) = next {
        if cells.len() > w * h {
            return Err(PlanError::BrokenChain(p));
        }
        cells.push(p);
        next = lists.closed_parent(p).ok_or(PlanError::BrokenChain(p))?;
    }
    cells.reverse();
    Ok(Route {
        cells,
        chosen_exit: goal.pos,
        total_cost: goal.g,
    })
}

thread_local! {
    static SCRATCH: RefCell<Option<FrontierLists>> = const { RefCell::new(None) };
}

fn with_lists<T>(map: &GridMap, f: impl FnOnce(&mut FrontierLists) -> T) -> T {
    SCRATCH.with(|cell| {
        let mut slot = cell.borrow_mut();
        let lists = match slot.as_mut() {
            Some(l) if l.dims() == (map.width(), map.height()) => {
                l.reset();
                l
            }
            _ => slot.insert(FrontierLists::new(map.width(), map.height())),
        };
        f(lists)
    })
}

pub(crate) fn check_inputs(
    map: &GridMap,
    dmap: &DensityMap,
    src: GridCoord,
    dsts: &[GridCoord],
    beta: f64,
) -> Result<(), PlanError> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(PlanError::BadBeta(beta));
    }
    if !dmap.matches(map) {
        return Err(PlanError::DensityMismatch {
            expected: (map.width(), map.height()),
            found: (dmap.width(), dmap.height()),
        });
    }
    if !map.in_bounds(src) {
        return Err(GridError::OutOfBounds(src).into());
    }
    if !map.is_passable(src) {
        return Err(GridError::WallCell(src).into());
    }
    map.check_destinations(dsts)?;
    Ok(())
}

/// Lowest-cost route from `src` to any of `dsts`, found in one search.
pub fn plan_route(
    map: &GridMap,
    dmap: &DensityMap,
    src: GridCoord,
    dsts: &[GridCoord],
    beta: f64,
) -> Result<Route, PlanError> {
    plan_route_with(map, dmap, src, dsts, &PlannerConfig::with_beta(beta)).map(|(r, _)| r)
}

/// [`plan_route`] with explicit configuration, also returning search counters.
pub fn plan_route_with(
    map: &GridMap,
    dmap: &DensityMap,
    src: GridCoord,
    dsts: &[GridCoord],
    config: &PlannerConfig,
) -> Result<(Route, SearchStats), PlanError> {
    check_inputs(map, dmap, src, dsts, config.beta)?;
    let mut stats = SearchStats::default();
    if dsts.contains(&src) {
        stats.expansions = 1;
        let route = Route {
            cells: vec![src],
            chosen_exit: src,
            total_cost: 0.0,
        };
        return Ok((route, stats));
    }
    with_lists(map, |lists| {
        let result = search(map, dmap, src, dsts, config, lists, &mut stats);
        result.map(|r| (r, stats))
    })
}

fn search(
    map: &GridMap,
    dmap: &DensityMap,
    src: GridCoord,
    dsts: &[GridCoord],
    config: &PlannerConfig,
    lists: &mut FrontierLists,
    stats: &mut SearchStats,
) -> Result<Route, PlanError> {
    let beta = config.beta;
    let mode = config.heuristic;
    let (h0, d0) = dsts
        .iter()
        .map(|d| (heuristic_for(mode, src, *d, beta), *d))
        .fold((f64::INFINITY, dsts[0]), |best, c| if c.0 < best.0 { c } else { best });
    lists.insert(PlanNode::new(src, None, d0, 0.0, h0));
    stats.insertions += 1;

    #[cfg(debug_assertions)]
    let mut last_f = f64::NEG_INFINITY;

    while let Some(p) = lists.pop() {
        stats.expansions += 1;
        if config.trace_pops {
            stats.popped_f.push(p.f);
        }
        #[cfg(debug_assertions)]
        {
            if mode == HeuristicMode::Scaled {
                debug_assert!(p.f >= last_f - 1e-9, "f decreased: {} after {}", p.f, last_f);
                last_f = last_f.max(p.f);
            }
        }
        // any destination popped is optimal: the open entry at a position
        // carries the smallest estimate over all exits, and that minimum is
        // itself consistent. The entry's `dst` tag may name another exit
        // when estimates tie (e.g. beta = 0), so test membership instead.
        if dsts.contains(&p.pos) {
            return trace_path(&p, lists);
        }
        map.for_each_neighbor(p.pos, |s, dist| {
            let g = p.g + blend(beta, dist, dmap.at(s));
            for &dst in dsts {
                let h = heuristic_for(mode, s, dst, beta);
                let cand = PlanNode::new(s, Some(p.pos), dst, g, h);
                if validate_candidate(&cand, lists) {
                    lists.insert(cand);
                    stats.insertions += 1;
                }
            }
        });
        lists.close(&p);
    }
    Err(PlanError::NoRoute(src))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::DensityParams;
    use crate::grid::parse_grid;

    fn c(x: usize, y: usize) -> GridCoord {
        GridCoord::new(x, y)
    }

    fn field(w: usize, h: usize, values: &[((usize, usize), f64)]) -> DensityMap {
        let mut rho = vec![0.0; w * h];
        for ((x, y), v) in values {
            rho[y * w + x] = *v;
        }
        DensityMap::from_values(w, h, rho, DensityParams::default()).unwrap()
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn edge_cost_blends_distance_and_density() {
        let d = field(3, 3, &[((1, 0), 2.0), ((1, 1), 7.0), ((0, 1), 0.25)]);
        assert_eq!(edge_cost(c(0, 0), c(1, 0), &d, 0.5).unwrap(), 1.5);
        assert!((edge_cost(c(0, 0), c(1, 1), &d, 1.0).unwrap() - 1.414_214).abs() < 1e-6);
        assert_eq!(edge_cost(c(0, 0), c(0, 1), &d, 0.0).unwrap(), 0.25);
        assert_eq!(
            edge_cost(c(0, 0), c(2, 0), &d, 0.5),
            Err(PlanError::NotAdjacent(c(0, 0), c(2, 0)))
        );
    }

    #[test]
    fn heuristic_values() {
        assert_eq!(heuristic(c(0, 0), c(3, 4), 1.0), 5.0);
        assert_eq!(heuristic(c(0, 0), c(3, 4), 0.5), 2.5);
        for beta in [0.0, 0.3, 1.0] {
            assert_eq!(heuristic(c(2, 2), c(2, 2), beta), 0.0);
        }
    }

    #[test]
    fn validate_conditions() {
        let mut lists = FrontierLists::new(4, 4);
        let fresh = PlanNode::new(c(1, 1), Some(c(0, 0)), c(3, 3), 1.0, 2.0);
        assert!(validate_candidate(&fresh, &lists));

        lists.insert(PlanNode::new(c(2, 2), Some(c(1, 1)), c(3, 3), 2.0, 2.0));
        let worse = PlanNode::new(c(2, 2), Some(c(1, 2)), c(3, 3), 3.0, 2.0);
        assert!(!validate_candidate(&worse, &lists));
        let better = PlanNode::new(c(2, 2), Some(c(1, 2)), c(3, 3), 1.5, 2.0);
        assert!(validate_candidate(&better, &lists));

        lists.close(&PlanNode::new(c(0, 3), Some(c(0, 2)), c(3, 3), 6.0, 3.0));
        let cheaper = PlanNode::new(c(0, 3), Some(c(1, 2)), c(3, 3), 5.5, 3.0);
        assert!(validate_candidate(&cheaper, &lists));
        let same = PlanNode::new(c(0, 3), Some(c(1, 2)), c(3, 3), 6.0, 3.0);
        assert!(!validate_candidate(&same, &lists));
    }

    #[test]
    fn diagonal_route_on_empty_map() {
        let map = GridMap::open(3, 3, &[c(2, 2)]).unwrap();
        let d = DensityMap::for_map(&map);
        let r = plan_route(&map, &d, c(0, 0), &[c(2, 2)], 1.0).unwrap();
        assert_eq!(r.cells, vec![c(0, 0), c(1, 1), c(2, 2)]);
        assert!((r.total_cost - 2.828_427).abs() < 1e-6);
    }

    #[test]
    fn equal_cost_exits_break_ties_deterministically() {
        let map = GridMap::open(3, 3, &[c(0, 2), c(2, 0)]).unwrap();
        let d = DensityMap::for_map(&map);
        let r = plan_route(&map, &d, c(0, 0), &[c(0, 2), c(2, 0)], 1.0).unwrap();
        assert_eq!(r.total_cost, 2.0);
        // same f and h: the exit first in reading order wins
        assert_eq!(r.chosen_exit, c(2, 0));
        let again = plan_route(&map, &d, c(0, 0), &[c(2, 0), c(0, 2)], 1.0).unwrap();
        assert_eq!(again, r);
    }

    #[test]
    fn crowded_near_exit_loses_to_clear_far_exit() {
        // E . S . . . E    exit A two steps left behind density 10, exit B four steps right
        let map = parse_grid("E.....E").unwrap();
        let d = field(7, 1, &[((1, 0), 10.0), ((0, 0), 10.0)]);
        let src = c(2, 0);
        let r = plan_route(&map, &d, src, map.exits(), 0.5).unwrap();
        // A: 2 * (0.5 + 5) = 11, B: 4 * 0.5 = 2
        assert_eq!(r.chosen_exit, c(6, 0));
        assert_eq!(r.total_cost, 2.0);
    }

    #[test]
    fn density_only_cost_stops_at_first_exit_reached() {
        // with beta = 0 every estimate is zero, so exit B's cell is first
        // entered by a candidate aimed at exit A; reaching it must still end
        let map = parse_grid("E.....E").unwrap();
        let d = field(7, 1, &[((1, 0), 3.0), ((2, 0), 3.0), ((3, 0), 3.0)]);
        let r = plan_route(&map, &d, c(5, 0), map.exits(), 0.0).unwrap();
        assert_eq!(r.chosen_exit, c(6, 0));
        assert_eq!(r.total_cost, 0.0);
    }

    #[test]
    fn source_on_exit_is_zero_length() {
        let map = GridMap::open(3, 3, &[c(1, 1)]).unwrap();
        let d = DensityMap::for_map(&map);
        let r = plan_route(&map, &d, c(1, 1), &[c(1, 1)], 0.5).unwrap();
        assert_eq!(r.cells, vec![c(1, 1)]);
        assert_eq!(r.total_cost, 0.0);
    }

    #[test]
    fn input_errors() {
        let map = parse_grid("E.#\n###\n..E").unwrap();
        let d = DensityMap::for_map(&map);
        assert_eq!(
            plan_route(&map, &d, c(2, 0), map.exits(), 0.5),
            Err(PlanError::Grid(GridError::WallCell(c(2, 0))))
        );
        assert_eq!(
            plan_route(&map, &d, c(1, 0), &[], 0.5),
            Err(PlanError::Grid(GridError::NoExits))
        );
        assert_eq!(
            plan_route(&map, &d, c(1, 0), &[c(1, 0)], 0.5),
            Err(PlanError::Grid(GridError::NotAnExit(c(1, 0))))
        );
        assert_eq!(
            plan_route(&map, &d, c(1, 0), map.exits(), 1.5),
            Err(PlanError::BadBeta(1.5))
        );
        // only the lower exit, which is sealed off from (1,0)
        assert_eq!(
            plan_route(&map, &d, c(1, 0), &[c(2, 2)], 0.5),
            Err(PlanError::NoRoute(c(1, 0)))
        );
        let small = DensityMap::zeros(2, 2, DensityParams::default());
        assert!(matches!(
            plan_route(&map, &small, c(1, 0), map.exits(), 0.5),
            Err(PlanError::DensityMismatch { .. })
        ));
    }

    #[test]
    fn trace_path_follows_parents() {
        let mut lists = FrontierLists::new(3, 3);
        let a = PlanNode::new(c(0, 0), None, c(2, 2), 0.0, 0.0);
        let b = PlanNode::new(c(1, 0), Some(c(0, 0)), c(2, 2), 1.0, 0.0);
        let m = PlanNode::new(c(1, 1), Some(c(1, 0)), c(2, 2), 2.0, 0.0);
        lists.close(&a);
        lists.close(&b);
        lists.close(&m);
        let goal = PlanNode::new(c(2, 1), Some(c(1, 1)), c(2, 1), 3.0, 0.0);
        let r = trace_path(&goal, &lists).unwrap();
        assert_eq!(r.cells, vec![c(0, 0), c(1, 0), c(1, 1), c(2, 1)]);
        assert_eq!(r.total_cost, 3.0);

        let orphan = PlanNode::new(c(2, 2), Some(c(2, 1)), c(2, 2), 1.0, 0.0);
        assert_eq!(
            trace_path(&orphan, &lists),
            Err(PlanError::BrokenChain(c(2, 1)))
        );
    }

    #[test]
    fn raw_heuristic_mode_still_reaches_an_exit() {
        let map = GridMap::open(8, 8, &[c(7, 7), c(0, 7)]).unwrap();
        let d = field(8, 8, &[((3, 3), 4.0), ((4, 4), 4.0)]);
        let cfg = PlannerConfig {
            beta: 0.3,
            heuristic: HeuristicMode::Raw,
            trace_pops: false,
        };
        let (r, _) = plan_route_with(&map, &d, c(0, 0), map.exits(), &cfg).unwrap();
        assert!(r.check(&map, &d, 0.3, map.exits()).is_ok());
    }
}
