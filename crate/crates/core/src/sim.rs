//! Discrete-time evacuation simulator.
//!
//! Agents walk along routes through cell centers. Each tick the density field
//! is rebuilt from the agents still inside; every `replan_every` ticks the
//! routing policy assigns fresh routes against that field. Walking speed drops
//! linearly with the density other agents put on the walker's cell:
//!
//! ```text
//! v = v_max * clamp(1 - rho / rho_cap, v_min_frac, 1)
//! ```
//!
//! Agents never block each other; crowding only acts through speed and,
//! for the congestion-aware policy, through route costs.

use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::density::{DensityBuilder, DensityError, DensityMap, DensityParams, PopulationCounts};
use crate::exec::Execution;
use crate::grid::{validate_map, GridCoord, GridMap};
use crate::router::{plan_route, PlanError, Route, DEFAULT_BETA};

pub const DEFAULT_V_MAX: f64 = 1.5;
pub const DEFAULT_V_MIN_FRAC: f64 = 0.1;
pub const DEFAULT_RHO_CAP: f64 = 6.0;
pub const DEFAULT_REPLAN_EVERY: u32 = 5;
pub const DEFAULT_MAX_TICKS: u32 = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("{0} free cells cannot reach an exit")]
    UnreachableCells(usize),
    #[error("scenario yields an empty population")]
    EmptyPopulation,
    #[error("agent {agent} at {cell} has no route to an exit: {source}")]
    Stranded {
        agent: usize,
        cell: GridCoord,
        source: PlanError,
    },
    #[error(transparent)]
    Density(#[from] DensityError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Policy {
    CongestionAware,
    NearestExit,
}

impl Policy {
    pub const ALL: [Policy; 2] = [Policy::CongestionAware, Policy::NearestExit];

    pub fn as_str(self) -> &'static str {
        match self {
            Policy::CongestionAware => "congestion_aware",
            Policy::NearestExit => "nearest_exit",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "congestion_aware" => Ok(Policy::CongestionAware),
            "nearest_exit" => Ok(Policy::NearestExit),
            other => Err(format!("unknown policy {other:?}")),
        }
    }
}

/// Initial placement of agents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Spawn {
    /// Uniformly over all free cells.
    Uniform,
    /// Uniformly over free cells within a Chebyshev radius of `center`.
    Cluster { center: GridCoord, radius: usize },
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub map: Arc<GridMap>,
    /// Agents per free cell.
    pub map_density: f64,
    pub beta: f64,
    pub density: DensityParams,
    pub seed: u64,
    pub policy: Policy,
    pub replan_every: u32,
    pub tick_seconds: f64,
    pub v_max: f64,
    pub v_min_frac: f64,
    pub rho_cap: f64,
    pub max_ticks: u32,
    pub spawn: Spawn,
    pub execution: Execution,
}

impl Scenario {
    pub fn new(map: Arc<GridMap>, map_density: f64, policy: Policy, seed: u64) -> Self {
        Self {
            map,
            map_density,
            beta: DEFAULT_BETA,
            density: DensityParams::default(),
            seed,
            policy,
            replan_every: DEFAULT_REPLAN_EVERY,
            tick_seconds: 1.0,
            v_max: DEFAULT_V_MAX,
            v_min_frac: DEFAULT_V_MIN_FRAC,
            rho_cap: DEFAULT_RHO_CAP,
            max_ticks: DEFAULT_MAX_TICKS,
            spawn: Spawn::Uniform,
            execution: Execution::default(),
        }
    }

    pub fn population(&self) -> usize {
        (self.map_density * self.map.free_count() as f64).round() as usize
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidScenario(m.to_string()));
        if !(self.map_density > 0.0 && self.map_density.is_finite()) {
            return bad("map_density must be positive");
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad("beta must lie in [0, 1]");
        }
        if !(self.density.gamma > 0.0 && self.density.gamma.is_finite()) {
            return bad("gamma must be positive");
        }
        if !(self.v_min_frac > 0.0 && self.v_min_frac <= 1.0) {
            return bad("v_min_frac must lie in (0, 1]");
        }
        if !(self.rho_cap > 0.0) {
            return bad("rho_cap must be positive");
        }
        if !(self.v_max > 0.0 && self.tick_seconds > 0.0) {
            return bad("v_max and tick_seconds must be positive");
        }
        if self.replan_every == 0 {
            return bad("replan_every must be at least 1");
        }
        Ok(())
    }

    /// `key=value` lines describing the run, for CSV headers.
    pub fn metadata(&self) -> Vec<(&'static str, String)> {
        vec![
            ("policy", self.policy.to_string()),
            ("seed", self.seed.to_string()),
            ("map_density", self.map_density.to_string()),
            ("population", self.population().to_string()),
            ("beta", self.beta.to_string()),
            ("gamma", self.density.gamma.to_string()),
            ("patch_radius", self.density.patch_radius.to_string()),
            ("replan_every", self.replan_every.to_string()),
            ("tick_seconds", self.tick_seconds.to_string()),
            ("v_max", self.v_max.to_string()),
            ("v_min_frac", self.v_min_frac.to_string()),
            ("rho_cap", self.rho_cap.to_string()),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub id: usize,
    /// World position in meters.
    pub position: (f64, f64),
    pub route: Option<Route>,
    /// Index into `route.cells` of the agent's current cell.
    pub progress: usize,
    pub evacuated: bool,
    pub distance_budget: f64,
}

impl Agent {
    pub fn at_cell(id: usize, map: &GridMap, cell: GridCoord) -> Self {
        Self {
            id,
            position: map.cell_center(cell),
            route: None,
            progress: 0,
            evacuated: false,
            distance_budget: 0.0,
        }
    }

    pub fn cell(&self, map: &GridMap) -> GridCoord {
        map.world_to_cell(self.position.0, self.position.1)
            .expect("agent left the map")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EgressStats {
    pub total_egress_ticks: u32,
    /// Agents still inside after each tick.
    pub remaining_curve: Vec<usize>,
    /// Exit each agent left through, by agent id.
    pub per_agent_exit: Vec<Option<GridCoord>>,
    pub seed: u64,
    pub population: usize,
    /// False when the tick limit stopped the run.
    pub completed: bool,
}

impl EgressStats {
    /// Remaining agents after `tick` ticks (the population at tick 0).
    pub fn remaining_at(&self, tick: usize) -> usize {
        match tick {
            0 => self.population,
            t => self.remaining_curve.get(t - 1).copied().unwrap_or(0),
        }
    }

    /// Per-run CSV: `# key=value` metadata, `tick,remaining` rows, and a summary line.
    pub fn to_csv(&self, scenario: &Scenario) -> String {
        let mut out = String::new();
        for (k, v) in scenario.metadata() {
            let _ = writeln!(out, "# {k}={v}");
        }
        out.push_str("tick,remaining\n");
        let _ = writeln!(out, "0,{}", self.population);
        for (i, r) in self.remaining_curve.iter().enumerate() {
            let _ = writeln!(out, "{},{}", i + 1, r);
        }
        let _ = writeln!(out, "# completed={}", self.completed);
        let _ = writeln!(out, "# total_egress_ticks={}", self.total_egress_ticks);
        out
    }
}

/// Walking speed in m/s for a given density.
pub fn speed_from_density(rho: f64, scenario: &Scenario) -> f64 {
    let frac = (1.0 - rho / scenario.rho_cap).clamp(scenario.v_min_frac, 1.0);
    scenario.v_max * frac
}

/// Shortest-distance route to the closest exit, ignoring density.
pub fn nearest_exit_policy(map: &GridMap, src: GridCoord) -> Result<Route, PlanError> {
    let zero = DensityMap::for_map(map);
    plan_route(map, &zero, src, map.exits(), 1.0)
}

/// Places the scenario's population on free cells. Deterministic per seed.
pub fn spawn_population(scenario: &Scenario) -> Result<Vec<Agent>, SimError> {
    scenario.validate()?;
    let map = &scenario.map;
    let diag = validate_map(map);
    if !diag.is_valid() {
        return Err(SimError::UnreachableCells(diag.unreachable_count()));
    }
    let n = scenario.population();
    if n == 0 {
        return Err(SimError::EmptyPopulation);
    }
    let cells: Vec<GridCoord> = match scenario.spawn {
        Spawn::Uniform => map.free_cells().collect(),
        Spawn::Cluster { center, radius } => map
            .free_cells()
            .filter(|c| c.x.abs_diff(center.x) <= radius && c.y.abs_diff(center.y) <= radius)
            .collect(),
    };
    if cells.is_empty() {
        return Err(SimError::InvalidScenario("no free cells to spawn on".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    Ok((0..n)
        .map(|id| Agent::at_cell(id, map, cells[rng.gen_range(0..cells.len())]))
        .collect())
}

/// Simulation state owned by a single loop.
#[derive(Debug)]
pub struct World {
    scenario: Scenario,
    agents: Vec<Agent>,
    builder: DensityBuilder,
    zero: DensityMap,
    tick: u32,
    remaining_curve: Vec<usize>,
    exits: Vec<Option<GridCoord>>,
    last_density: Option<DensityMap>,
}

impl World {
    pub fn new(scenario: Scenario, agents: Vec<Agent>) -> Result<Self, SimError> {
        scenario.validate()?;
        let zero = DensityMap::for_map(&scenario.map);
        let exits = vec![None; agents.len()];
        Ok(Self {
            builder: DensityBuilder::new(scenario.density),
            scenario,
            agents,
            zero,
            tick: 0,
            remaining_curve: Vec::new(),
            exits,
            last_density: None,
        })
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn tick(&self) -> u32 {
        self.tick
    }

    pub fn remaining(&self) -> usize {
        self.agents.iter().filter(|a| !a.evacuated).count()
    }

    /// Snapshot used during the most recent tick.
    pub fn last_density(&self) -> Option<&DensityMap> {
        self.last_density.as_ref()
    }

    fn snapshot(&mut self) -> Result<DensityMap, SimError> {
        let map = &self.scenario.map;
        let mut counts = PopulationCounts::for_map(map);
        for a in self.agents.iter().filter(|a| !a.evacuated) {
            counts.add(a.cell(map), 1)?;
        }
        Ok(self.builder.rebuild(&counts, map)?)
    }

    fn replan(&mut self, dmap: &DensityMap) -> Result<(), SimError> {
        let sc = &self.scenario;
        let map = &*sc.map;
        let policy = sc.policy;
        // Nearest-exit routes ignore density, and the rest of a shortest path is
        // still a shortest path, so those agents keep the route they have.
        let todo: Vec<(usize, GridCoord)> = self
            .agents
            .iter()
            .filter(|a| !a.evacuated)
            .filter(|a| policy == Policy::CongestionAware || a.route.is_none())
            .map(|a| (a.id, a.cell(map)))
            .collect();
        let zero = &self.zero;
        let routes = sc.execution.map(&todo, |&(_, cell)| match policy {
            Policy::CongestionAware => plan_route(map, dmap, cell, map.exits(), sc.beta),
            Policy::NearestExit => plan_route(map, zero, cell, map.exits(), 1.0),
        });
        for ((id, cell), route) in todo.into_iter().zip(routes) {
            let route = route.map_err(|source| SimError::Stranded {
                agent: id,
                cell,
                source,
            })?;
            let agent = &mut self.agents[id];
            agent.route = Some(route);
            agent.progress = 0;
        }
        Ok(())
    }

    /// Advances the world by one tick.
    pub fn step(&mut self) -> Result<(), SimError> {
        let dmap = self.snapshot()?;
        if self.tick.is_multiple_of(self.scenario.replan_every)
            || self.agents.iter().any(|a| !a.evacuated && a.route.is_none())
        {
            self.replan(&dmap)?;
        }

        let sc = &self.scenario;
        let map = &*sc.map;
        let own = sc.density.peak();
        for agent in self.agents.iter_mut().filter(|a| !a.evacuated) {
            let route = agent.route.as_ref().expect("active agent without a route");
            let here = route.cells[agent.progress];
            // density from everybody but the walker
            let rho = (dmap.at(here) - own).max(0.0);
            agent.distance_budget += speed_from_density(rho, sc) * sc.tick_seconds;
            while agent.progress + 1 < route.cells.len() {
                let (a, b) = (route.cells[agent.progress], route.cells[agent.progress + 1]);
                let seg = step_meters(a, b, map.cell_size());
                if agent.distance_budget < seg {
                    break;
                }
                agent.distance_budget -= seg;
                agent.progress += 1;
                agent.position = map.cell_center(b);
            }
            if agent.progress + 1 == route.cells.len() {
                agent.evacuated = true;
                self.exits[agent.id] = Some(route.chosen_exit);
            }
        }
        self.tick += 1;
        self.remaining_curve.push(self.remaining());
        self.last_density = Some(dmap);
        Ok(())
    }

    /// Steps until everyone is out or the tick limit is reached.
    pub fn run(mut self) -> Result<EgressStats, SimError> {
        while self.remaining() > 0 && self.tick < self.scenario.max_ticks {
            self.step()?;
        }
        Ok(self.finish())
    }

    pub fn finish(self) -> EgressStats {
        let completed = self.remaining() == 0;
        EgressStats {
            total_egress_ticks: self.remaining_curve.len() as u32,
            remaining_curve: self.remaining_curve,
            per_agent_exit: self.exits,
            seed: self.scenario.seed,
            population: self.agents.len(),
            completed,
        }
    }
}

fn step_meters(a: GridCoord, b: GridCoord, cell_size: f64) -> f64 {
    if a.x != b.x && a.y != b.y {
        std::f64::consts::SQRT_2 * cell_size
    } else {
        cell_size
    }
}

/// Spawns the scenario's population and runs it to completion.
pub fn run_evacuation(scenario: &Scenario) -> Result<EgressStats, SimError> {
    let agents = spawn_population(scenario)?;
    World::new(scenario.clone(), agents)?.run()
}

/// Runs a scenario with a given set of agents instead of spawning.
pub fn run_with_agents(scenario: &Scenario, agents: Vec<Agent>) -> Result<EgressStats, SimError> {
    World::new(scenario.clone(), agents)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::parse_grid;

    fn scenario(text: &str, policy: Policy) -> Scenario {
        let map = Arc::new(parse_grid(text).unwrap());
        let mut sc = Scenario::new(map, 0.1, policy, 7);
        sc.execution = Execution::Sequential;
        sc
    }

    #[test]
    fn speed_model() {
        let sc = scenario("E", Policy::NearestExit);
        assert_eq!(speed_from_density(0.0, &sc), 1.5);
        assert_eq!(speed_from_density(3.0, &sc), 0.75);
        assert!((speed_from_density(6.0, &sc) - 0.15).abs() < 1e-12);
        assert!((speed_from_density(60.0, &sc) - 0.15).abs() < 1e-12);
    }

    #[test]
    fn lone_walker_needs_two_ticks_for_three_meters() {
        let sc = scenario("...E", Policy::NearestExit);
        let agents = vec![Agent::at_cell(0, &sc.map, GridCoord::new(0, 0))];
        let stats = run_with_agents(&sc, agents).unwrap();
        assert_eq!(stats.remaining_curve, vec![1, 0]);
        assert_eq!(stats.total_egress_ticks, 2);
        assert!(stats.completed);
        assert_eq!(stats.per_agent_exit, vec![Some(GridCoord::new(3, 0))]);
    }

    #[test]
    fn no_agents_means_no_ticks() {
        let sc = scenario("...E", Policy::CongestionAware);
        let stats = run_with_agents(&sc, Vec::new()).unwrap();
        assert_eq!(stats.total_egress_ticks, 0);
        assert!(stats.completed);
    }

    #[test]
    fn mirrored_agents_leave_at_the_same_tick() {
        let sc = scenario("E.......E\n.........", Policy::CongestionAware);
        let agents = vec![
            Agent::at_cell(0, &sc.map, GridCoord::new(2, 1)),
            Agent::at_cell(1, &sc.map, GridCoord::new(6, 1)),
        ];
        let mut world = World::new(sc, agents).unwrap();
        let mut left = [None, None];
        while world.remaining() > 0 {
            world.step().unwrap();
            for a in world.agents() {
                if a.evacuated && left[a.id].is_none() {
                    left[a.id] = Some(world.tick());
                }
            }
        }
        assert_eq!(left[0], left[1]);
        let stats = world.finish();
        assert_eq!(stats.per_agent_exit[0], Some(GridCoord::new(0, 0)));
        assert_eq!(stats.per_agent_exit[1], Some(GridCoord::new(8, 0)));
    }

    #[test]
    fn spawn_counts_and_determinism() {
        let map = Arc::new(GridMap::open(10, 10, &[GridCoord::new(0, 0)]).unwrap());
        let sc = Scenario::new(map, 0.2, Policy::NearestExit, 11);
        let a = spawn_population(&sc).unwrap();
        assert_eq!(a.len(), (0.2f64 * 99.0).round() as usize);
        assert_eq!(a, spawn_population(&sc).unwrap());
        for agent in &a {
            assert!(!sc.map.is_exit(agent.cell(&sc.map)));
        }
    }

    #[test]
    fn spawn_rejects_empty_population_and_unreachable_maps() {
        let map = Arc::new(GridMap::open(3, 3, &[GridCoord::new(0, 0)]).unwrap());
        let sc = Scenario::new(map, 0.01, Policy::NearestExit, 1);
        assert_eq!(spawn_population(&sc), Err(SimError::EmptyPopulation));

        let map = Arc::new(parse_grid("E.#.\n..##\n....").unwrap());
        let sc = Scenario::new(map, 0.5, Policy::NearestExit, 1);
        assert_eq!(spawn_population(&sc), Err(SimError::UnreachableCells(1)));
    }

    #[test]
    fn cluster_spawn_stays_in_the_box() {
        let map = Arc::new(GridMap::open(20, 20, &[GridCoord::new(0, 0)]).unwrap());
        let mut sc = Scenario::new(map, 0.1, Policy::NearestExit, 3);
        sc.spawn = Spawn::Cluster {
            center: GridCoord::new(10, 10),
            radius: 2,
        };
        for a in spawn_population(&sc).unwrap() {
            let c = a.cell(&sc.map);
            assert!(c.x.abs_diff(10) <= 2 && c.y.abs_diff(10) <= 2);
        }
    }

    #[test]
    fn nearest_exit_routes() {
        let map = GridMap::open(3, 3, &[GridCoord::new(0, 2), GridCoord::new(2, 2)]).unwrap();
        let r = nearest_exit_policy(&map, GridCoord::new(0, 0)).unwrap();
        assert_eq!(r.chosen_exit, GridCoord::new(0, 2));
        assert_eq!(r.total_cost, 2.0);
        let r = nearest_exit_policy(&map, GridCoord::new(2, 2)).unwrap();
        assert_eq!(r.cells.len(), 1);

        let walled = parse_grid("E.#.\n..##\n....").unwrap();
        assert_eq!(
            nearest_exit_policy(&walled, GridCoord::new(3, 0)),
            Err(PlanError::NoRoute(GridCoord::new(3, 0)))
        );
    }

    #[test]
    fn tick_limit_marks_run_incomplete() {
        let mut sc = scenario("..........E", Policy::NearestExit);
        sc.max_ticks = 2;
        let agents = vec![Agent::at_cell(0, &sc.map, GridCoord::new(0, 0))];
        let stats = run_with_agents(&sc, agents).unwrap();
        assert!(!stats.completed);
        assert_eq!(stats.total_egress_ticks, 2);
    }

    #[test]
    fn invalid_scenarios() {
        let mut sc = scenario("E.", Policy::NearestExit);
        sc.replan_every = 0;
        assert!(sc.validate().is_err());
        let mut sc = scenario("E.", Policy::NearestExit);
        sc.v_min_frac = 0.0;
        assert!(sc.validate().is_err());
        let mut sc = scenario("E.", Policy::NearestExit);
        sc.map_density = 0.0;
        assert!(sc.validate().is_err());
    }

    #[test]
    fn csv_layout() {
        let sc = scenario("...E", Policy::NearestExit);
        let agents = vec![Agent::at_cell(0, &sc.map, GridCoord::new(0, 0))];
        let csv = run_with_agents(&sc, agents).unwrap().to_csv(&sc);
        assert!(csv.starts_with("# policy=nearest_exit\n"));
        assert!(csv.contains("tick,remaining\n0,1\n1,1\n2,0\n"));
        assert!(csv.ends_with("# total_egress_ticks=2\n"));
    }
}
