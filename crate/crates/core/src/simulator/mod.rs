//! Scenario execution: the synchronized multi-robot loop, outcome
//! bookkeeping, metrics, and log persistence.
//!
//! Each tick freezes one [`WorldState`] snapshot; every still-active
//! controller runs its full sense/learn/solve pipeline against that same
//! snapshot with no shared information beyond what its own rays return;
//! the chosen inputs are then applied simultaneously and the obstacles
//! advance analytically to the next sample time. A collision (any surface
//! distance dipping below zero) terminates the run immediately.

pub mod logs;
pub mod scenario;

pub use logs::{write_logs, write_plot_data};
pub use scenario::{load_scenario, Scenario};

use crate::controller::{ControllerStatus, RobotController, TickRecord};
use crate::kinematics::{step, ControlInput};
use crate::world::{surface_distance, BodySet, WorldState};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

/// Everything that can go wrong loading scenarios or persisting runs.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid scenario: {field}: {message}")]
    Validation { field: String, message: String },
}

/// Terminal state of one robot at the end of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RobotOutcome {
    Reached,
    Timeout,
    Collision,
}

/// One tick's clearance snapshot, split by body class. Values are surface
/// distances in meters; infinity when the class has no pair.
#[derive(Debug, Clone, Copy)]
pub struct ClearanceSample {
    pub tick: usize,
    pub time_s: f64,
    pub robot_robot: f64,
    pub robot_obstacle: f64,
}

impl ClearanceSample {
    pub fn min(&self) -> f64 {
        self.robot_robot.min(self.robot_obstacle)
    }
}

/// Complete outcome of one simulation.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub scenario_name: String,
    pub robot_ids: Vec<String>,
    /// Per-robot tick records, index-aligned with `robot_ids`. A robot's
    /// sequence ends at its reach tick (or at run end).
    pub records: Vec<Vec<TickRecord>>,
    pub outcomes: Vec<RobotOutcome>,
    /// One sample per executed tick, taken from the tick's snapshot before
    /// any controller ran.
    pub clearance_series: Vec<ClearanceSample>,
    /// Smallest surface distance each robot ever had to any other body.
    pub per_robot_min_clearance: Vec<f64>,
    pub ticks_executed: usize,
    pub wall_clock_s: f64,
}

impl RunResult {
    /// Smallest clearance seen at any tick, any pair.
    pub fn min_clearance(&self) -> f64 {
        self.clearance_series
            .iter()
            .fold(f64::INFINITY, |acc, s| acc.min(s.min()))
    }

    pub fn success(&self) -> bool {
        !self.outcomes.is_empty()
            && self.outcomes.iter().all(|o| *o == RobotOutcome::Reached)
    }
}

/// Per-robot figures of a run.
#[derive(Debug, Clone, Serialize)]
pub struct RobotMetrics {
    pub id: String,
    pub outcome: RobotOutcome,
    /// Snapshot time at which the goal check first passed; NaN (null in
    /// JSON) when never reached.
    pub time_to_goal_s: f64,
    /// Sum of consecutive position distances along the recorded trajectory.
    pub path_length_m: f64,
    /// Smallest surface distance to any other body over the whole run;
    /// infinity (null in JSON) when alone in an empty world.
    pub min_clearance_m: f64,
    pub mean_solve_time_s: f64,
    pub max_solve_time_s: f64,
    pub mean_train_time_s: f64,
}

/// Run-level summary written as `metrics.json`.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsSummary {
    pub scenario: String,
    pub success: bool,
    pub ticks_executed: usize,
    pub wall_clock_s: f64,
    pub robots: Vec<RobotMetrics>,
}

/// Command-line overrides and dump switches.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub max_ticks: Option<usize>,
    /// Write each robot's first- and last-tick training datasets.
    pub dump_datasets: bool,
    /// Write each robot's final network parameters.
    pub dump_weights: bool,
}

/// Surface distances in one snapshot: per robot, plus the robot-robot and
/// robot-obstacle minima.
fn clearances(world: &WorldState, bodies: &BodySet) -> (Vec<f64>, f64, f64) {
    let robots = bodies.robot_circles(world);
    let obstacles = bodies.obstacle_circles(world);
    let n = robots.len();
    let mut per_robot = vec![f64::INFINITY; n];
    let mut rr = f64::INFINITY;
    let mut ro = f64::INFINITY;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = surface_distance(&robots[i], &robots[j]);
            rr = rr.min(d);
            per_robot[i] = per_robot[i].min(d);
            per_robot[j] = per_robot[j].min(d);
        }
        for o in &obstacles {
            let d = surface_distance(&robots[i], o);
            ro = ro.min(d);
            per_robot[i] = per_robot[i].min(d);
        }
    }
    (per_robot, rr, ro)
}

/// Runs the loop without touching the filesystem; also hands back the final
/// controllers and world for artifact dumps.
fn simulate_inner(
    scenario: &Scenario,
    opts: &RunOptions,
) -> (RunResult, Vec<RobotController>, WorldState) {
    let t_start = Instant::now();
    let seed = opts.seed.unwrap_or(scenario.seed);
    let max_ticks = opts.max_ticks.unwrap_or(scenario.max_ticks);
    let bodies = scenario.body_set();
    let kin = scenario.kinematics_params();
    let mut controllers = scenario.controllers(seed);
    let n = controllers.len();

    let mut world = scenario.initial_world();
    let mut records: Vec<Vec<TickRecord>> = vec![Vec::new(); n];
    let mut clearance_series: Vec<ClearanceSample> = Vec::new();
    let mut outcomes: Vec<Option<RobotOutcome>> = vec![None; n];
    let mut per_robot_min = vec![f64::INFINITY; n];

    for tick in 0..max_ticks {
        // Snapshot clearances first: a run is judged on the states that
        // actually occurred, including the initial one.
        let (per_robot, rr, ro) = clearances(&world, &bodies);
        clearance_series.push(ClearanceSample {
            tick,
            time_s: world.time,
            robot_robot: rr,
            robot_obstacle: ro,
        });
        let mut collided = false;
        for i in 0..n {
            per_robot_min[i] = per_robot_min[i].min(per_robot[i]);
            if per_robot[i] < 0.0 {
                outcomes[i] = Some(RobotOutcome::Collision);
                collided = true;
            }
        }
        if collided {
            break;
        }

        // Every active controller ticks against the same frozen snapshot.
        let mut inputs = vec![ControlInput::ZERO; n];
        for i in 0..n {
            if matches!(outcomes[i], Some(RobotOutcome::Reached)) {
                continue;
            }
            let (u, record) = controllers[i].tick(&world, &bodies);
            inputs[i] = u;
            records[i].push(record);
            if controllers[i].status == ControllerStatus::Reached {
                outcomes[i] = Some(RobotOutcome::Reached);
            }
        }
        if outcomes
            .iter()
            .all(|o| matches!(o, Some(RobotOutcome::Reached)))
        {
            break;
        }

        // Synchronous advance: all inputs applied to the same snapshot,
        // obstacles repositioned analytically at the new time.
        let poses = world
            .robot_poses
            .iter()
            .zip(&inputs)
            .map(|(p, u)| step(p, u, &kin))
            .collect();
        world = WorldState::at_time(world.time + kin.ts, poses, &scenario.obstacles);
    }

    let outcomes: Vec<RobotOutcome> = outcomes
        .into_iter()
        .map(|o| o.unwrap_or(RobotOutcome::Timeout))
        .collect();
    let result = RunResult {
        scenario_name: scenario.name.clone(),
        robot_ids: scenario.robots.iter().map(|r| r.id.clone()).collect(),
        records,
        outcomes,
        ticks_executed: clearance_series.len(),
        clearance_series,
        per_robot_min_clearance: per_robot_min,
        wall_clock_s: t_start.elapsed().as_secs_f64(),
    };
    (result, controllers, world)
}

/// Runs a scenario in memory and returns the result without writing logs.
pub fn simulate(scenario: &Scenario, opts: &RunOptions) -> RunResult {
    simulate_inner(scenario, opts).0
}

/// Runs a scenario and persists all logs under `out_dir` (created if
/// missing): one trajectory and one solver-telemetry CSV per robot, the
/// clearance series, and `metrics.json`.
pub fn run(scenario: &Scenario, out_dir: &Path, opts: &RunOptions) -> Result<RunResult, SimError> {
    let (result, controllers, final_world) = simulate_inner(scenario, opts);
    write_logs(&result, out_dir)?;
    if opts.dump_weights {
        for ctrl in &controllers {
            logs::write_weights(&ctrl.net, &out_dir.join(format!("weights_{}.json", ctrl.id)))?;
        }
    }
    if opts.dump_datasets {
        let bodies = scenario.body_set();
        let initial = scenario.initial_world();
        for ctrl in &controllers {
            for (world, tag) in [(&initial, "initial"), (&final_world, "final")] {
                let scan =
                    crate::sensing::simulate_scan(ctrl.robot_index, world, &bodies, &ctrl.lidar);
                let data = crate::sensing::build_dataset(&scan, &ctrl.lidar, &ctrl.sampling);
                logs::write_dataset(
                    &data,
                    &out_dir.join(format!("dataset_{}_{}.csv", ctrl.id, tag)),
                )?;
            }
        }
    }
    Ok(result)
}

/// Aggregates a run into per-robot figures plus the global success flag.
pub fn summarize(result: &RunResult) -> MetricsSummary {
    let robots = result
        .robot_ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let recs = &result.records[i];
            let time_to_goal_s = recs
                .last()
                .filter(|r| r.status == ControllerStatus::Reached)
                .map_or(f64::NAN, |r| r.time);
            let path_length_m = recs
                .windows(2)
                .map(|w| {
                    w[0].pose
                        .position()
                        .distance_to(&w[1].pose.position())
                })
                .sum();
            let solved: Vec<&TickRecord> =
                recs.iter().filter(|r| r.solver_status.is_some()).collect();
            let mean = |xs: &[f64]| -> f64 {
                if xs.is_empty() {
                    f64::NAN
                } else {
                    xs.iter().sum::<f64>() / xs.len() as f64
                }
            };
            let solve_times: Vec<f64> = solved.iter().map(|r| r.solve_time_s).collect();
            let train_times: Vec<f64> = solved.iter().map(|r| r.train_time_s).collect();
            RobotMetrics {
                id: id.clone(),
                outcome: result.outcomes[i],
                time_to_goal_s,
                path_length_m,
                min_clearance_m: result.per_robot_min_clearance[i],
                mean_solve_time_s: mean(&solve_times),
                max_solve_time_s: solve_times.iter().copied().fold(f64::NAN, f64::max),
                mean_train_time_s: mean(&train_times),
            }
        })
        .collect();
    MetricsSummary {
        scenario: result.scenario_name.clone(),
        success: result.success(),
        ticks_executed: result.ticks_executed,
        wall_clock_s: result.wall_clock_s,
        robots,
    }
}
