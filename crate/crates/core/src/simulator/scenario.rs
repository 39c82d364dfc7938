//! Scenario files: schema, parsing and validation.
//!
//! Scenarios are JSON with units of meters, radians and seconds. Unknown
//! keys are rejected so typos fail loudly. Every tuning block is optional
//! and falls back to the library defaults; the workspace rectangle doubles
//! as the position bounds handed to the solver.

use crate::controller::RobotController;
use crate::kinematics::KinematicsParams;
use crate::lbf::{BarrierNet, TrainConfig, DEFAULT_LAYER_SIZES};
use crate::nmpc::NmpcConfig;
use crate::sensing::{LidarConfig, SamplingConfig};
use crate::world::{obstacle_center_at, BodySet, Circle, Obstacle, Pose, RobotBody, WorldState};
use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::path::Path;

use super::SimError;

/// Axis-aligned workspace rectangle.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workspace {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Workspace {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSpec {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub theta: f64,
}

impl PoseSpec {
    pub fn pose(&self) -> Pose {
        Pose {
            x: self.x,
            y: self.y,
            theta: self.theta,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    pub id: String,
    pub start: PoseSpec,
    pub goal: PoseSpec,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LidarSpec {
    pub ray_count: usize,
    pub d_max: f64,
}

impl Default for LidarSpec {
    fn default() -> Self {
        Self {
            ray_count: 36,
            d_max: 3.5,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSpec {
    pub samples_per_ray: usize,
    pub delta: f64,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        let d = SamplingConfig::default();
        Self {
            samples_per_ray: d.samples_per_ray,
            delta: d.delta,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NmpcSpec {
    pub horizon: usize,
    pub q_diag: [f64; 3],
    pub r_diag: [f64; 2],
    pub gamma: f64,
    pub barrier_margin: f64,
    pub u_min: [f64; 2],
    pub u_max: [f64; 2],
}

impl Default for NmpcSpec {
    fn default() -> Self {
        Self {
            horizon: 15,
            q_diag: [5.0, 5.0, 0.05],
            r_diag: [2.0, 0.5],
            gamma: 0.1,
            barrier_margin: 0.0,
            u_min: [-0.22, -2.84],
            u_max: [0.22, 2.84],
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KinematicsSpec {
    /// Offset of the velocity reference point from the wheel axle, meters.
    pub a: f64,
    /// Sampling time, seconds; also the simulation step.
    pub ts: f64,
}

impl Default for KinematicsSpec {
    fn default() -> Self {
        let d = KinematicsParams::default();
        Self { a: d.a, ts: d.ts }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub learning_rate: f64,
    pub epochs: usize,
    #[serde(default)]
    pub batch_size: Option<usize>,
}

impl Default for TrainSpec {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            learning_rate: d.learning_rate,
            epochs: d.epochs,
            batch_size: d.batch_size,
        }
    }
}

fn default_max_ticks() -> usize {
    2000
}

fn default_goal_tolerance() -> f64 {
    0.1
}

/// A complete simulation description. All tuning blocks are optional in the
/// file and default to the library's standard values.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Marks layouts that approximate a published figure rather than
    /// measuring a physical space.
    #[serde(default)]
    pub reconstructed: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_ticks")]
    pub max_ticks: usize,
    pub workspace: Workspace,
    pub robots: Vec<RobotSpec>,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    #[serde(default)]
    pub lidar: LidarSpec,
    #[serde(default)]
    pub sampling: SamplingSpec,
    #[serde(default)]
    pub nmpc: NmpcSpec,
    #[serde(default)]
    pub kinematics: KinematicsSpec,
    #[serde(default)]
    pub train: TrainSpec,
    #[serde(default = "default_goal_tolerance")]
    pub goal_tolerance: f64,
}

impl Scenario {
    pub fn body_set(&self) -> BodySet {
        BodySet {
            robots: self
                .robots
                .iter()
                .map(|r| RobotBody {
                    id: r.id.clone(),
                    radius: r.radius,
                })
                .collect(),
            obstacles: self.obstacles.clone(),
        }
    }

    pub fn initial_world(&self) -> WorldState {
        WorldState::at_time(
            0.0,
            self.robots.iter().map(|r| r.start.pose()).collect(),
            &self.obstacles,
        )
    }

    pub fn lidar_config(&self) -> LidarConfig {
        LidarConfig::new(self.lidar.ray_count, self.lidar.d_max)
    }

    pub fn sampling_config(&self) -> SamplingConfig {
        SamplingConfig {
            samples_per_ray: self.sampling.samples_per_ray,
            delta: self.sampling.delta,
        }
    }

    pub fn kinematics_params(&self) -> KinematicsParams {
        KinematicsParams {
            a: self.kinematics.a,
            ts: self.kinematics.ts,
        }
    }

    /// Solver configuration; position bounds come from the workspace
    /// rectangle, heading is unbounded.
    pub fn nmpc_config(&self) -> NmpcConfig {
        NmpcConfig {
            horizon: self.nmpc.horizon,
            q: Matrix3::from_diagonal(&Vector3::from_column_slice(&self.nmpc.q_diag)),
            r: Matrix2::from_diagonal(&Vector2::from_column_slice(&self.nmpc.r_diag)),
            x_min: Vector3::new(self.workspace.x_min, self.workspace.y_min, f64::NEG_INFINITY),
            x_max: Vector3::new(self.workspace.x_max, self.workspace.y_max, f64::INFINITY),
            u_min: Vector2::from_column_slice(&self.nmpc.u_min),
            u_max: Vector2::from_column_slice(&self.nmpc.u_max),
            gamma: self.nmpc.gamma,
            barrier_margin: self.nmpc.barrier_margin,
        }
    }

    /// Training configuration for one robot. All randomness descends from
    /// the run seed through a per-robot offset, so robots stay decoupled
    /// and runs replay exactly.
    pub fn train_config(&self, robot_index: usize, run_seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            seed: run_seed.wrapping_add(robot_index as u64),
        }
    }

    /// Builds one freshly initialized controller per robot.
    pub fn controllers(&self, run_seed: u64) -> Vec<RobotController> {
        self.robots
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let net = BarrierNet::new(
                    &DEFAULT_LAYER_SIZES,
                    run_seed.wrapping_add(i as u64),
                );
                let mut ctrl = RobotController::new(
                    r.id.clone(),
                    i,
                    r.goal.pose(),
                    net,
                    self.nmpc_config(),
                    self.kinematics_params(),
                    self.lidar_config(),
                    self.sampling_config(),
                    self.train_config(i, run_seed),
                );
                ctrl.goal_tolerance = self.goal_tolerance;
                ctrl
            })
            .collect()
    }

    /// Checks every file-level invariant, reporting the first offender by
    /// field path.
    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |field: &str, message: String| {
            Err(SimError::Validation {
                field: field.to_string(),
                message,
            })
        };
        if self.name.is_empty() {
            return fail("name", "must be nonempty".into());
        }
        if self.workspace.x_min >= self.workspace.x_max {
            return fail("workspace.x_min", "must be < workspace.x_max".into());
        }
        if self.workspace.y_min >= self.workspace.y_max {
            return fail("workspace.y_min", "must be < workspace.y_max".into());
        }
        if self.robots.is_empty() {
            return fail("robots", "at least one robot is required".into());
        }
        for (i, r) in self.robots.iter().enumerate() {
            let field = |f: &str| format!("robots[{i}].{f}");
            if r.id.is_empty()
                || !r
                    .id
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
            {
                return fail(
                    &field("id"),
                    "must be nonempty and contain only [A-Za-z0-9_-] (ids name log files)"
                        .into(),
                );
            }
            if !(r.radius > 0.0 && r.radius.is_finite()) {
                return fail(&field("radius"), format!("must be positive, got {}", r.radius));
            }
            if !self.workspace.contains(r.start.x, r.start.y) {
                return fail(&field("start"), "outside workspace".into());
            }
            if !self.workspace.contains(r.goal.x, r.goal.y) {
                return fail(&field("goal"), "outside workspace".into());
            }
            for (j, other) in self.robots.iter().enumerate().take(i) {
                if other.id == r.id {
                    return fail(&field("id"), format!("duplicates robots[{j}].id"));
                }
                let d = Circle::new(
                    crate::world::Position2::new(r.start.x, r.start.y),
                    r.radius,
                );
                let o = Circle::new(
                    crate::world::Position2::new(other.start.x, other.start.y),
                    other.radius,
                );
                if crate::world::surface_distance(&d, &o) <= 0.0 {
                    return fail(&field("start"), format!("overlaps robots[{j}].start"));
                }
            }
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            let field = |f: &str| format!("obstacles[{i}].{f}");
            if !(o.radius > 0.0 && o.radius.is_finite()) {
                return fail(&field("radius"), format!("must be positive, got {}", o.radius));
            }
            let c0 = obstacle_center_at(o, 0.0);
            for (j, r) in self.robots.iter().enumerate() {
                let rc = Circle::new(crate::world::Position2::new(r.start.x, r.start.y), r.radius);
                let oc = Circle::new(c0, o.radius);
                if crate::world::surface_distance(&rc, &oc) <= 0.0 {
                    return fail(
                        &format!("robots[{j}].start"),
                        format!("overlaps obstacles[{i}] ({:?}) at t = 0", o.id),
                    );
                }
            }
        }
        if self.lidar.ray_count == 0 {
            return fail("lidar.ray_count", "must be >= 1".into());
        }
        if !(self.lidar.d_max > 0.0) {
            return fail("lidar.d_max", "must be positive".into());
        }
        if self.sampling.samples_per_ray == 0 {
            return fail("sampling.samples_per_ray", "must be >= 1".into());
        }
        if !(self.sampling.delta >= 0.0) {
            return fail("sampling.delta", "must be >= 0".into());
        }
        if self.nmpc.horizon == 0 {
            return fail("nmpc.horizon", "must be >= 1".into());
        }
        if !(self.nmpc.gamma > 0.0 && self.nmpc.gamma <= 1.0) {
            return fail("nmpc.gamma", "must lie in (0, 1]".into());
        }
        if !(self.nmpc.barrier_margin >= 0.0) {
            return fail("nmpc.barrier_margin", "must be >= 0".into());
        }
        for c in 0..2 {
            if !(self.nmpc.u_min[c] < self.nmpc.u_max[c]) {
                return fail("nmpc.u_min", "must be componentwise < nmpc.u_max".into());
            }
        }
        if !(self.kinematics.ts > 0.0) {
            return fail("kinematics.ts", "must be positive".into());
        }
        if !(self.kinematics.a != 0.0 && self.kinematics.a.is_finite()) {
            return fail("kinematics.a", "must be nonzero".into());
        }
        if !(self.train.learning_rate > 0.0) {
            return fail("train.learning_rate", "must be positive".into());
        }
        if let Some(b) = self.train.batch_size {
            if b == 0 {
                return fail("train.batch_size", "must be >= 1 when given".into());
            }
        }
        if !(self.goal_tolerance > 0.0) {
            return fail("goal_tolerance", "must be positive".into());
        }
        Ok(())
    }
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario, SimError> {
    let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let scenario: Scenario = serde_json::from_str(&text).map_err(|e| SimError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    scenario.validate()?;
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> serde_json::Value {
        serde_json::json!({
            "name": "unit",
            "workspace": {"x_min": -2.0, "x_max": 2.0, "y_min": -2.0, "y_max": 2.0},
            "robots": [
                {"id": "r0", "start": {"x": -1.0, "y": 0.0, "theta": 0.0},
                 "goal": {"x": 1.0, "y": 0.0}, "radius": 0.1}
            ]
        })
    }

    fn scenario_from(v: serde_json::Value) -> Result<Scenario, SimError> {
        let s: Scenario = serde_json::from_value(v).map_err(|e| SimError::Parse {
            path: "inline".into(),
            message: e.to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    #[test]
    fn minimal_scenario_gets_all_defaults() {
        let s = scenario_from(minimal_json()).unwrap();
        assert_eq!(s.max_ticks, 2000);
        assert_eq!(s.lidar.ray_count, 36);
        assert_eq!(s.sampling.samples_per_ray, 50);
        assert_eq!(s.nmpc.horizon, 15);
        assert_eq!(s.kinematics.ts, 0.05);
        assert_eq!(s.train.epochs, 20);
        assert_eq!(s.goal_tolerance, 0.1);
        assert!(!s.reconstructed);
        let cfg = s.nmpc_config();
        assert_eq!(cfg.x_min[0], -2.0);
        assert_eq!(cfg.x_max[1], 2.0);
        assert!(cfg.x_max[2].is_infinite());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v = minimal_json();
        v["typo_field"] = serde_json::json!(1);
        let err = scenario_from(v).unwrap_err();
        assert!(matches!(err, SimError::Parse { .. }), "{err}");
    }

    #[test]
    fn start_inside_obstacle_is_a_validation_error() {
        let mut v = minimal_json();
        v["obstacles"] = serde_json::json!([
            {"id": "block", "radius": 0.5,
             "motion": {"type": "static", "center": {"x": -1.0, "y": 0.0}}}
        ]);
        let err = scenario_from(v).unwrap_err();
        match err {
            SimError::Validation { field, .. } => {
                assert_eq!(field, "robots[0].start");
            }
            other => panic!("expected validation error, got {other}"),
        }
    }

    #[test]
    fn goal_outside_workspace_is_named() {
        let mut v = minimal_json();
        v["robots"][0]["goal"]["x"] = serde_json::json!(5.0);
        let err = scenario_from(v).unwrap_err();
        match err {
            SimError::Validation { field, .. } => assert_eq!(field, "robots[0].goal"),
            other => panic!("expected validation error, got {other}"),
        }
    }

    #[test]
    fn overlapping_starts_are_rejected() {
        let mut v = minimal_json();
        v["robots"] = serde_json::json!([
            {"id": "a", "start": {"x": 0.0, "y": 0.0}, "goal": {"x": 1.0, "y": 0.0}, "radius": 0.2},
            {"id": "b", "start": {"x": 0.1, "y": 0.0}, "goal": {"x": -1.0, "y": 0.0}, "radius": 0.2}
        ]);
        let err = scenario_from(v).unwrap_err();
        match err {
            SimError::Validation { field, .. } => assert_eq!(field, "robots[1].start"),
            other => panic!("expected validation error, got {other}"),
        }
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let mut v = minimal_json();
        v["robots"] = serde_json::json!([
            {"id": "same", "start": {"x": -1.0, "y": 0.0}, "goal": {"x": 1.0, "y": 0.0}, "radius": 0.1},
            {"id": "same", "start": {"x": 1.0, "y": 0.0}, "goal": {"x": -1.0, "y": 0.0}, "radius": 0.1}
        ]);
        assert!(matches!(
            scenario_from(v),
            Err(SimError::Validation { .. })
        ));
    }

    #[test]
    fn per_robot_seeds_are_offset_from_run_seed() {
        let s = scenario_from(minimal_json()).unwrap();
        assert_eq!(s.train_config(0, 42).seed, 42);
        assert_eq!(s.train_config(3, 42).seed, 45);
    }

    #[test]
    fn roundtrips_through_json() {
        let s = scenario_from(minimal_json()).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        let back: Scenario = serde_json::from_str(&text).unwrap();
        assert_eq!(back.robots[0].id, "r0");
        assert_eq!(back.max_ticks, s.max_ticks);
    }
}
