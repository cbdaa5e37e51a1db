use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use evac_core::density::{bin_positions, build_density};
use evac_core::dispatch::server::{self, ServerConfig};
use evac_core::dispatch::protocol::format_route;
use evac_core::experiment::{
    bench_csv, bench_planners, load_map, parse_config, render_heatmap_csv, run_experiment,
    ExperimentConfig,
};
use evac_core::grid::{parse_grid, validate_map};
use evac_core::router::plan_route;
use evac_core::DensityParams;

#[derive(Parser)]
#[command(name = "evac", version, about = "Congestion-aware evacuation routing toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run policy comparison experiments and write CSV results.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Output directory for runs.csv, summary.csv and curves.csv.
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Also write one tick,remaining CSV per run under <out>/runs/.
        #[arg(long)]
        per_run_csv: bool,
    },
    /// Time the planners on growing agent counts.
    Bench {
        #[command(flatten)]
        common: CommonArgs,
        /// Output CSV file; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plan one route and print it.
    Plan {
        #[arg(long)]
        map: PathBuf,
        /// Source x in meters.
        #[arg(long)]
        x: f64,
        /// Source y in meters.
        #[arg(long)]
        y: f64,
        #[arg(long, default_value_t = evac_core::router::DEFAULT_BETA)]
        beta: f64,
        #[arg(long, default_value_t = evac_core::density::DEFAULT_GAMMA)]
        gamma: f64,
        #[arg(long, default_value_t = evac_core::density::DEFAULT_PATCH_RADIUS)]
        patch_radius: usize,
        /// File of `x,y` agent positions in meters used to build the density map.
        #[arg(long)]
        population: Option<PathBuf>,
        /// Write the density map as x,y,rho CSV.
        #[arg(long)]
        heatmap: Option<PathBuf>,
    },
    /// Start the TCP planning service.
    Serve {
        #[arg(long)]
        map: PathBuf,
        #[arg(long, default_value_t = 7070)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        #[arg(long, default_value_t = evac_core::router::DEFAULT_BETA)]
        beta: f64,
        #[arg(long, default_value_t = evac_core::density::DEFAULT_GAMMA)]
        gamma: f64,
    },
    /// Report free cells that cannot reach an exit.
    Validate {
        #[arg(long)]
        map: PathBuf,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    map: Option<PathBuf>,
    /// Comma-separated map densities (agents per free cell).
    #[arg(long)]
    densities: Option<String>,
    /// Comma-separated policies: congestion_aware, nearest_exit.
    #[arg(long)]
    policies: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Comma-separated agent counts for bench.
    #[arg(long)]
    agents: Option<String>,
    /// Comma-separated worker counts for bench.
    #[arg(long)]
    workers: Option<String>,
    /// Override any config key, e.g. `--set replan_every=1`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl CommonArgs {
    fn load(&self) -> Result<ExperimentConfig, Failure> {
        let mut pairs = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
                let mut pairs = parse_config(&text).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
                // a relative map path in a config file is relative to that file
                if let (Some(m), Some(dir)) = (pairs.get_mut("map"), p.parent()) {
                    if Path::new(m.as_str()).is_relative() {
                        *m = dir.join(m.as_str()).display().to_string();
                    }
                }
                pairs
            }
            None => BTreeMap::new(),
        };
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                pairs.insert(k.to_string(), v);
            }
        };
        put("map", self.map.as_ref().map(|p| p.display().to_string()));
        put("densities", self.densities.clone());
        put("policies", self.policies.clone());
        put("trials", self.trials.map(|v| v.to_string()));
        put("seed", self.seed.map(|v| v.to_string()));
        put("beta", self.beta.map(|v| v.to_string()));
        put("agents", self.agents.clone());
        put("workers", self.workers.clone());
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Failure::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            pairs.insert(k.trim().to_string(), v.trim().to_string());
        }
        ExperimentConfig::from_pairs(&pairs).map_err(|e| Failure::Config(e.to_string()))
    }
}

fn write_out(path: &Path, body: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, body).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn read_positions(path: &Path) -> Result<Vec<(f64, f64)>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('x') {
            continue;
        }
        let parsed = line
            .split_once(',')
            .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)));
        match parsed {
            Some(p) => out.push(p),
            None => return Err(Failure::Config(format!("{}:{}: expected x,y", path.display(), i + 1))),
        }
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Validate { map } => {
            let text = fs::read_to_string(&map).map_err(|e| Failure::Config(format!("{}: {e}", map.display())))?;
            let grid = parse_grid(&text).map_err(|e| Failure::Config(format!("{}: {e}", map.display())))?;
            let diag = validate_map(&grid);
            println!(
                "{}x{} cells, {} free, {} exits, {} unreachable",
                grid.width(),
                grid.height(),
                diag.free_cells,
                diag.exits,
                diag.unreachable_count()
            );
            for c in diag.unreachable.iter().take(20) {
                println!("unreachable {} {}", c.x, c.y);
            }
            if diag.is_valid() {
                Ok(())
            } else {
                Err(Failure::Config(format!("{} unreachable free cells", diag.unreachable_count())))
            }
        }
        Command::Plan {
            map,
            x,
            y,
            beta,
            gamma,
            patch_radius,
            population,
            heatmap,
        } => {
            let grid = load_map(&map).map_err(|e| Failure::Config(e.to_string()))?;
            let positions = match population {
                Some(p) => read_positions(&p)?,
                None => Vec::new(),
            };
            let counts = bin_positions(&positions, &grid).map_err(|e| Failure::Config(e.to_string()))?;
            let params = DensityParams { gamma, patch_radius };
            let dmap = build_density(&counts, &grid, params).map_err(|e| Failure::Config(e.to_string()))?;
            if let Some(h) = heatmap {
                write_out(&h, &render_heatmap_csv(&dmap))?;
            }
            let src = grid
                .world_to_cell(x, y)
                .ok_or_else(|| Failure::Config(format!("({x}, {y}) is outside the map")))?;
            let route = plan_route(&grid, &dmap, src, grid.exits(), beta)
                .map_err(|e| Failure::Runtime(e.to_string()))?;
            println!("# beta={beta} gamma={gamma} patch_radius={patch_radius}");
            println!(
                "# exit={} {} cost={:.6} steps={}",
                route.chosen_exit.x,
                route.chosen_exit.y,
                route.total_cost,
                route.steps()
            );
            println!("{}", format_route(0, dmap.version(), &route));
            Ok(())
        }
        Command::Run {
            common,
            out,
            per_run_csv,
        } => {
            let cfg = common.load()?;
            let result = run_experiment(&cfg).map_err(|e| Failure::Runtime(e.to_string()))?;
            let files = result.write_to(&out).map_err(|e| Failure::Runtime(e.to_string()))?;
            if per_run_csv {
                for r in &result.runs {
                    let sc = cfg.scenario(r.map_density, r.policy, r.stats.seed);
                    let name = format!("{}_{}_{}.csv", r.map_density, r.policy, r.stats.seed);
                    write_out(&out.join("runs").join(name), &r.stats.to_csv(&sc))?;
                }
            }
            print!("{}", result.summary_csv());
            for f in files {
                eprintln!("wrote {}", f.display());
            }
            Ok(())
        }
        Command::Bench { common, out } => {
            let cfg = common.load()?;
            let rows = bench_planners(&cfg).map_err(|e| Failure::Runtime(e.to_string()))?;
            let csv = bench_csv(&cfg.header(), &rows);
            match out {
                Some(p) => write_out(&p, &csv)?,
                None => print!("{csv}"),
            }
            Ok(())
        }
        Command::Serve {
            map,
            port,
            host,
            workers,
            beta,
            gamma,
        } => {
            let grid = load_map(&map).map_err(|e| Failure::Config(e.to_string()))?;
            if workers == 0 {
                return Err(Failure::Config("workers must be at least 1".into()));
            }
            let config = ServerConfig {
                workers,
                beta,
                density: DensityParams {
                    gamma,
                    ..DensityParams::default()
                },
                ..ServerConfig::default()
            };
            let handle = server::spawn((host.as_str(), port), Arc::new(grid), config)
                .map_err(|e| Failure::Runtime(e.to_string()))?;
            eprintln!("listening on {} with {workers} workers", handle.local_addr());
            handle.wait();
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
