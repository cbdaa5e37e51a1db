//! Experiment orchestration: policy sweeps, planner timing and CSV output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::density::{bin_positions, build_density, DensityMap, DensityParams};
use crate::dispatch::{Dispatcher, RouteRequest};
use crate::exec::Execution;
use crate::grid::{parse_grid, validate_map, GridError, GridMap};
use crate::router::{plan_dijkstra, plan_repeated_astar, plan_route, PlannerConfig, DEFAULT_BETA};
use crate::sim::{run_evacuation, spawn_population, EgressStats, Policy, Scenario, SimError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected key=value")]
    Syntax { line: usize },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("bad value for {key}: {value:?}")]
    BadValue { key: String, value: String },
    #[error("missing required key {0:?}")]
    Missing(&'static str),
    #[error("{0}")]
    Invalid(String),
    #[error("map {path}: {source}")]
    Map { path: PathBuf, source: GridError },
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PlannerKind {
    SinglePass,
    RepeatedAstar,
    Dijkstra,
}

impl PlannerKind {
    pub const ALL: [PlannerKind; 3] = [
        PlannerKind::SinglePass,
        PlannerKind::RepeatedAstar,
        PlannerKind::Dijkstra,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PlannerKind::SinglePass => "single_pass",
            PlannerKind::RepeatedAstar => "repeated_astar",
            PlannerKind::Dijkstra => "dijkstra",
        }
    }
}

impl FromStr for PlannerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown planner {s:?}"))
    }
}

/// Reads `key=value` lines. Blank lines and `#` comments are skipped.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub map: Arc<GridMap>,
    pub map_path: Option<PathBuf>,
    pub densities: Vec<f64>,
    pub policies: Vec<Policy>,
    pub trials: usize,
    pub seed: u64,
    pub beta: f64,
    pub density: DensityParams,
    pub replan_every: u32,
    pub tick_seconds: f64,
    pub v_max: f64,
    pub v_min_frac: f64,
    pub rho_cap: f64,
    pub max_ticks: u32,
    pub execution: Execution,
    pub planners: Vec<PlannerKind>,
    pub agent_counts: Vec<usize>,
    pub worker_counts: Vec<usize>,
    pub bench_trials: usize,
}

pub const CONFIG_KEYS: &[&str] = &[
    "map",
    "densities",
    "policies",
    "trials",
    "seed",
    "beta",
    "gamma",
    "patch_radius",
    "replan_every",
    "tick_seconds",
    "v_max",
    "v_min_frac",
    "rho_cap",
    "max_ticks",
    "execution",
    "planners",
    "agents",
    "workers",
    "bench_trials",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.trim().parse().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
    })
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

/// Loads and checks a map file, rejecting maps where a free cell cannot reach an exit.
pub fn load_map(path: &Path) -> Result<GridMap, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let map = parse_grid(&text).map_err(|source| ConfigError::Map {
        path: path.to_path_buf(),
        source,
    })?;
    let diag = validate_map(&map);
    if !diag.is_valid() {
        return Err(ConfigError::Invalid(format!(
            "map {}: {} free cells cannot reach an exit",
            path.display(),
            diag.unreachable_count()
        )));
    }
    Ok(map)
}

impl ExperimentConfig {
    pub fn new(map: Arc<GridMap>) -> Self {
        let defaults = Scenario::new(Arc::clone(&map), 0.02, Policy::CongestionAware, 0);
        Self {
            map,
            map_path: None,
            densities: vec![0.02, 0.06],
            policies: Policy::ALL.to_vec(),
            trials: 30,
            seed: 1,
            beta: DEFAULT_BETA,
            density: DensityParams::default(),
            replan_every: defaults.replan_every,
            tick_seconds: defaults.tick_seconds,
            v_max: defaults.v_max,
            v_min_frac: defaults.v_min_frac,
            rho_cap: defaults.rho_cap,
            max_ticks: defaults.max_ticks,
            execution: Execution::default(),
            planners: PlannerKind::ALL.to_vec(),
            agent_counts: vec![10, 100, 500, 1000],
            worker_counts: vec![1, 2, 4, 8],
            bench_trials: 5,
        }
    }

    /// Builds a config from `key=value` pairs. `map` is required.
    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self, ConfigError> {
        if let Some(k) = pairs.keys().find(|k| !CONFIG_KEYS.contains(&k.as_str())) {
            return Err(ConfigError::UnknownKey(k.clone()));
        }
        let path = PathBuf::from(pairs.get("map").ok_or(ConfigError::Missing("map"))?);
        let map = load_map(&path)?;
        let mut cfg = Self::new(Arc::new(map));
        cfg.map_path = Some(path);
        for (k, v) in pairs {
            match k.as_str() {
                "map" => {}
                "densities" => cfg.densities = parse_list(k, v)?,
                "policies" => cfg.policies = parse_list(k, v)?,
                "trials" => cfg.trials = parse_value(k, v)?,
                "seed" => cfg.seed = parse_value(k, v)?,
                "beta" => cfg.beta = parse_value(k, v)?,
                "gamma" => cfg.density.gamma = parse_value(k, v)?,
                "patch_radius" => cfg.density.patch_radius = parse_value(k, v)?,
                "replan_every" => cfg.replan_every = parse_value(k, v)?,
                "tick_seconds" => cfg.tick_seconds = parse_value(k, v)?,
                "v_max" => cfg.v_max = parse_value(k, v)?,
                "v_min_frac" => cfg.v_min_frac = parse_value(k, v)?,
                "rho_cap" => cfg.rho_cap = parse_value(k, v)?,
                "max_ticks" => cfg.max_ticks = parse_value(k, v)?,
                "execution" => {
                    cfg.execution = match v.as_str() {
                        "parallel" => Execution::Parallel,
                        "sequential" => Execution::Sequential,
                        _ => return Err(ConfigError::BadValue { key: k.clone(), value: v.clone() }),
                    }
                }
                "planners" => cfg.planners = parse_list(k, v)?,
                "agents" => cfg.agent_counts = parse_list(k, v)?,
                "workers" => cfg.worker_counts = parse_list(k, v)?,
                "bench_trials" => cfg.bench_trials = parse_value(k, v)?,
                _ => unreachable!(),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.trials == 0 || self.bench_trials == 0 {
            return bad("trials must be at least 1");
        }
        if self.densities.is_empty() || self.densities.iter().any(|d| !(*d > 0.0)) {
            return bad("densities must be positive");
        }
        if self.policies.is_empty() {
            return bad("at least one policy is required");
        }
        if self.map.exits().is_empty() {
            return bad("map has no exits");
        }
        if self.worker_counts.contains(&0) {
            return bad("worker counts must be positive");
        }
        self.scenario(self.densities[0], self.policies[0], self.seed)
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn scenario(&self, map_density: f64, policy: Policy, seed: u64) -> Scenario {
        let mut sc = Scenario::new(Arc::clone(&self.map), map_density, policy, seed);
        sc.beta = self.beta;
        sc.density = self.density;
        sc.replan_every = self.replan_every;
        sc.tick_seconds = self.tick_seconds;
        sc.v_max = self.v_max;
        sc.v_min_frac = self.v_min_frac;
        sc.rho_cap = self.rho_cap;
        sc.max_ticks = self.max_ticks;
        sc.execution = self.execution;
        sc
    }

    /// `# key=value` lines shared by every CSV this config produces.
    pub fn header(&self) -> String {
        let mut out = String::new();
        if let Some(p) = &self.map_path {
            let _ = writeln!(out, "# map={}", p.display());
        }
        let _ = writeln!(out, "# beta={}", self.beta);
        let _ = writeln!(out, "# gamma={}", self.density.gamma);
        let _ = writeln!(out, "# patch_radius={}", self.density.patch_radius);
        let _ = writeln!(out, "# replan_every={}", self.replan_every);
        let _ = writeln!(out, "# v_max={}", self.v_max);
        let _ = writeln!(out, "# v_min_frac={}", self.v_min_frac);
        let _ = writeln!(out, "# rho_cap={}", self.rho_cap);
        let _ = writeln!(out, "# base_seed={}", self.seed);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub map_density: f64,
    pub policy: Policy,
    pub stats: EgressStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub map_density: f64,
    pub policy: Policy,
    pub trials: usize,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub header: String,
    pub runs: Vec<RunRecord>,
    pub summary: Vec<SummaryRow>,
}

/// Mean and 98% two-sided Student-t interval. A single sample gives a point interval.
pub fn mean_ci98(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len();
    assert!(n > 0, "empty sample");
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, mean, mean);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("valid t distribution")
        .inverse_cdf(0.99);
    let half = t * (var / n as f64).sqrt();
    (mean, mean - half, mean + half)
}

/// One-sided paired t-test of `mean(a - b) < 0`. Returns `(t, p)`.
pub fn paired_t_test_less(a: &[f64], b: &[f64]) -> (f64, f64) {
    assert_eq!(a.len(), b.len(), "paired samples differ in length");
    let n = a.len();
    assert!(n >= 2, "need at least two pairs");
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        let p = if mean < 0.0 { 0.0 } else { 1.0 };
        return (mean.signum() * f64::INFINITY, p);
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("valid t distribution");
    (t, dist.cdf(t))
}

/// Average remaining-agents curve over runs; finished runs count as 0.
pub fn mean_curve(runs: &[&EgressStats]) -> Vec<f64> {
    let len = runs.iter().map(|s| s.remaining_curve.len()).max().unwrap_or(0);
    (0..=len)
        .map(|t| runs.iter().map(|s| s.remaining_at(t) as f64).sum::<f64>() / runs.len() as f64)
        .collect()
}

/// Runs every (density, policy, trial) cell. Trial `i` uses seed `seed + i` for all policies.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult, RunError> {
    config.validate().map_err(|e| RunError::Other(e.to_string()))?;
    let mut runs = Vec::new();
    let mut summary = Vec::new();
    for &d in &config.densities {
        for &policy in &config.policies {
            let mut ticks = Vec::with_capacity(config.trials);
            for i in 0..config.trials {
                let seed = config.seed + i as u64;
                let stats = run_evacuation(&config.scenario(d, policy, seed))?;
                ticks.push(stats.total_egress_ticks as f64);
                runs.push(RunRecord {
                    map_density: d,
                    policy,
                    stats,
                });
            }
            let (mean, ci_low, ci_high) = mean_ci98(&ticks);
            summary.push(SummaryRow {
                map_density: d,
                policy,
                trials: config.trials,
                mean,
                ci_low,
                ci_high,
            });
        }
    }
    Ok(ExperimentResult {
        header: config.header(),
        runs,
        summary,
    })
}

impl ExperimentResult {
    pub fn runs_csv(&self) -> String {
        let mut out = self.header.clone();
        out.push_str("density,policy,seed,total_egress_ticks,completed\n");
        for r in &self.runs {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.map_density, r.policy, r.stats.seed, r.stats.total_egress_ticks, r.stats.completed
            );
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = self.header.clone();
        out.push_str("density,policy,trials,mean_egress_ticks,ci98_low,ci98_high\n");
        for s in &self.summary {
            let _ = writeln!(
                out,
                "{},{},{},{:.4},{:.4},{:.4}",
                s.map_density, s.policy, s.trials, s.mean, s.ci_low, s.ci_high
            );
        }
        out
    }

    pub fn curves_csv(&self) -> String {
        let mut out = self.header.clone();
        out.push_str("density,policy,seed,tick,remaining\n");
        for r in &self.runs {
            for t in 0..=r.stats.remaining_curve.len() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    r.map_density,
                    r.policy,
                    r.stats.seed,
                    t,
                    r.stats.remaining_at(t)
                );
            }
        }
        out
    }

    /// Writes `runs.csv`, `summary.csv` and `curves.csv` into `dir`.
    pub fn write_to(&self, dir: &Path) -> io::Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let files = [
            ("runs.csv", self.runs_csv()),
            ("summary.csv", self.summary_csv()),
            ("curves.csv", self.curves_csv()),
        ];
        let mut written = Vec::new();
        for (name, body) in files {
            let p = dir.join(name);
            fs::write(&p, body)?;
            written.push(p);
        }
        Ok(written)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub planner: PlannerKind,
    pub agents: usize,
    pub workers: usize,
    pub mean_ms: f64,
    pub trials: usize,
}

pub fn bench_csv(header: &str, rows: &[BenchRow]) -> String {
    let mut out = header.to_string();
    out.push_str("planner,agents,workers,mean_ms,trials\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.3},{}",
            r.planner.as_str(),
            r.agents,
            r.workers,
            r.mean_ms,
            r.trials
        );
    }
    out
}

/// A routing workload: agent positions and the density field they produce.
#[derive(Debug, Clone)]
pub struct Workload {
    pub requests: Vec<RouteRequest>,
    pub snapshot: Arc<DensityMap>,
}

/// Spawns `agents` uniformly (seeded) and builds the matching density snapshot.
pub fn make_workload(config: &ExperimentConfig, agents: usize, seed: u64) -> Result<Workload, RunError> {
    let free = config.map.free_count();
    let mut sc = config.scenario(agents as f64 / free as f64, Policy::CongestionAware, seed);
    sc.map_density = agents as f64 / free as f64;
    let spawned = spawn_population(&sc)?;
    let positions: Vec<(f64, f64)> = spawned.iter().map(|a| a.position).collect();
    let counts = bin_positions(&positions, &config.map).map_err(SimError::from)?;
    let snapshot = build_density(&counts, &config.map, config.density)
        .map_err(SimError::from)?
        .with_version(1);
    let requests = spawned
        .iter()
        .map(|a| RouteRequest {
            user_id: a.id as u64,
            src: a.position,
            requested_at: 1,
        })
        .collect();
    Ok(Workload {
        requests,
        snapshot: Arc::new(snapshot),
    })
}

/// Routes every request of `work` once on the calling thread with a baseline planner.
pub fn route_all(map: &GridMap, work: &Workload, planner: PlannerKind, beta: f64) -> usize {
    let cfg = PlannerConfig::with_beta(beta);
    let exits = map.exits();
    let mut ok = 0;
    for r in &work.requests {
        let Some(cell) = map.world_to_cell(r.src.0, r.src.1) else { continue };
        let routed = match planner {
            PlannerKind::SinglePass => plan_route(map, &work.snapshot, cell, exits, beta).is_ok(),
            PlannerKind::RepeatedAstar => plan_repeated_astar(map, &work.snapshot, cell, exits, &cfg).is_ok(),
            PlannerKind::Dijkstra => plan_dijkstra(map, &work.snapshot, cell, exits, beta).is_ok(),
        };
        ok += routed as usize;
    }
    ok
}

/// Times routing every agent with each planner, and the single-pass planner
/// on each worker count. Map loading and spawning are outside the timed region.
pub fn bench_planners(config: &ExperimentConfig) -> Result<Vec<BenchRow>, RunError> {
    config.validate().map_err(|e| RunError::Other(e.to_string()))?;
    let mut rows = Vec::new();
    for &agents in &config.agent_counts {
        let work = make_workload(config, agents, config.seed)?;
        for &planner in &config.planners {
            if planner == PlannerKind::SinglePass {
                for &w in &config.worker_counts {
                    let mut dispatcher = Dispatcher::new(Arc::clone(&config.map), config.beta, w)
                        .map_err(|e| RunError::Other(e.to_string()))?;
                    let mut total = 0.0;
                    for _ in 0..config.bench_trials {
                        let t0 = Instant::now();
                        let out = dispatcher.serve(&work.snapshot, &work.requests);
                        total += t0.elapsed().as_secs_f64();
                        std::hint::black_box(out);
                    }
                    rows.push(BenchRow {
                        planner,
                        agents,
                        workers: w,
                        mean_ms: total * 1e3 / config.bench_trials as f64,
                        trials: config.bench_trials,
                    });
                }
            } else {
                let mut total = 0.0;
                for _ in 0..config.bench_trials {
                    let t0 = Instant::now();
                    std::hint::black_box(route_all(&config.map, &work, planner, config.beta));
                    total += t0.elapsed().as_secs_f64();
                }
                rows.push(BenchRow {
                    planner,
                    agents,
                    workers: 1,
                    mean_ms: total * 1e3 / config.bench_trials as f64,
                    trials: config.bench_trials,
                });
            }
        }
    }
    Ok(rows)
}

/// Plot-ready `x,y,rho` rows for a density snapshot.
pub fn render_heatmap_csv(dmap: &DensityMap) -> String {
    dmap.to_csv()
}
