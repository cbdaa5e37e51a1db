//! Congestion-aware evacuation routing.
//!
//! * [`grid`]: floorplans and adjacency.
//! * [`density`]: population density snapshots built from agent positions.
//! * [`router`]: single-pass multi-exit A* over density-weighted costs, plus
//!   repeated-A* and Dijkstra baselines.
//! * [`sim`]: a discrete-time crowd simulator measuring egress time.
//! * [`dispatch`]: the worker-pool planning service and its line protocol.
//! * [`experiment`]: experiment sweeps, planner benchmarks and CSV output.

pub mod density;
pub mod dispatch;
pub mod exec;
pub mod experiment;
pub mod grid;
pub mod router;
pub mod sim;

pub use density::{bin_positions, build_density, DensityBuilder, DensityMap, DensityParams, PopulationCounts};
pub use exec::Execution;
pub use grid::{parse_grid, validate_map, CellKind, GridCoord, GridMap};
pub use router::{edge_cost, heuristic, plan_route, PlanError, PlanNode, PlannerConfig, Route};
