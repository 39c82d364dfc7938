//! Per-robot control executive: sense, learn, solve, act.
//!
//! Each tick runs the full pipeline against an immutable world snapshot:
//! simulate the LiDAR sweep, expand it into a labeled dataset, take a few
//! gradient-descent epochs on the barrier network, solve the horizon
//! problem warm-started from the previous solution, and return the first
//! optimal input. A robot within `e_ref` of its goal position reports
//! `Reached` and stops; an infeasible solve triggers a zero-velocity safety
//! stop (`Stopped`) that is retried on the next tick with a cold start.

use crate::kinematics::{ControlInput, KinematicsParams};
use crate::lbf::{BarrierNet, TrainConfig};
use crate::nmpc::{shift_warm_start, HorizonSolution, NmpcConfig, NmpcProblem, SolveStatus, WarmStart};
use crate::sensing::{build_dataset, simulate_scan, LidarConfig, SamplingConfig};
use crate::world::{BodySet, Pose, Position2, WorldState};
use std::time::Instant;

/// Goal tolerance on position distance, meters.
pub const DEFAULT_GOAL_TOLERANCE: f64 = 0.1;

/// Lifecycle of one robot's controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerStatus {
    /// Actively driving toward the goal.
    Running,
    /// Within the goal tolerance; terminal.
    Reached,
    /// Safety stop after an infeasible solve; re-enters Running when a
    /// later solve succeeds.
    Stopped,
}

/// Everything observable about one control tick.
#[derive(Debug, Clone)]
pub struct TickRecord {
    /// World time at which the tick's snapshot was taken, seconds.
    pub time: f64,
    /// Robot pose in the snapshot.
    pub pose: Pose,
    /// Input actually applied this tick (zero on guard/fallback ticks).
    pub applied: ControlInput,
    /// Position distance to the goal, meters.
    pub distance_to_goal: f64,
    /// Controller status after the tick.
    pub status: ControllerStatus,
    /// Solver outcome; `None` when the goal guard fired before solving.
    pub solver_status: Option<SolveStatus>,
    /// SQP iterations spent.
    pub sqp_iterations: usize,
    /// Solution objective value.
    pub objective: Option<f64>,
    /// Worst dynamics-defect magnitude in the returned horizon.
    pub max_eq_violation: Option<f64>,
    /// Worst barrier-condition violation in the returned horizon.
    pub max_cbc_violation: Option<f64>,
    /// Smallest barrier-condition residual along the returned horizon
    /// (nonnegative means the condition holds everywhere).
    pub min_cbc_residual: Option<f64>,
    /// Smallest predicted barrier value over the horizon states.
    pub min_h_horizon: Option<f64>,
    /// Training loss after this tick's epochs; `None` when training was
    /// skipped (no data or non-finite loss).
    pub train_loss: Option<f64>,
    /// Wall-clock spent in training, seconds.
    pub train_time_s: f64,
    /// Wall-clock spent in the solver, seconds.
    pub solve_time_s: f64,
}

/// One robot's closed-loop controller state.
pub struct RobotController {
    pub id: String,
    /// Index of this robot in the world's pose list and body set.
    pub robot_index: usize,
    /// Goal pose; only its position enters the termination check.
    pub goal: Pose,
    pub net: BarrierNet,
    pub nmpc: NmpcConfig,
    pub kinematics: KinematicsParams,
    pub lidar: LidarConfig,
    pub sampling: SamplingConfig,
    pub train: TrainConfig,
    /// Goal tolerance on position distance, meters.
    pub goal_tolerance: f64,
    pub status: ControllerStatus,
    last_solution: Option<HorizonSolution>,
}

impl RobotController {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: impl Into<String>,
        robot_index: usize,
        goal: Pose,
        net: BarrierNet,
        nmpc: NmpcConfig,
        kinematics: KinematicsParams,
        lidar: LidarConfig,
        sampling: SamplingConfig,
        train: TrainConfig,
    ) -> Self {
        Self {
            id: id.into(),
            robot_index,
            goal,
            net,
            nmpc,
            kinematics,
            lidar,
            sampling,
            train,
            goal_tolerance: DEFAULT_GOAL_TOLERANCE,
            status: ControllerStatus::Reached, // replaced on construction below
            last_solution: None,
        }
        .started()
    }

    fn started(mut self) -> Self {
        self.status = ControllerStatus::Running;
        self
    }

    /// Most recent horizon solution, if the last solve succeeded.
    pub fn last_solution(&self) -> Option<&HorizonSolution> {
        self.last_solution.as_ref()
    }

    /// Runs one full control iteration against the snapshot and returns the
    /// input to apply plus the tick's record.
    pub fn tick(&mut self, world: &WorldState, bodies: &BodySet) -> (ControlInput, TickRecord) {
        let pose = world.robot_poses[self.robot_index];
        let distance_to_goal = pose
            .position()
            .distance_to(&Position2::new(self.goal.x, self.goal.y));

        if distance_to_goal <= self.goal_tolerance {
            self.status = ControllerStatus::Reached;
            let record = TickRecord {
                time: world.time,
                pose,
                applied: ControlInput::ZERO,
                distance_to_goal,
                status: self.status,
                solver_status: None,
                sqp_iterations: 0,
                objective: None,
                max_eq_violation: None,
                max_cbc_violation: None,
                min_cbc_residual: None,
                min_h_horizon: None,
                train_loss: None,
                train_time_s: 0.0,
                solve_time_s: 0.0,
            };
            return (ControlInput::ZERO, record);
        }

        // Sense and learn. A training failure (no data, divergence) leaves
        // the previous weights in place and the tick proceeds to the solve.
        let t_train = Instant::now();
        let scan = simulate_scan(self.robot_index, world, bodies, &self.lidar);
        let dataset = build_dataset(&scan, &self.lidar, &self.sampling);
        let train_loss = self
            .net
            .train_incremental(&dataset, &self.train)
            .ok()
            .map(|report| report.final_loss);
        let train_time_s = t_train.elapsed().as_secs_f64();

        // Solve, warm-started from the shifted previous solution when one
        // exists.
        let warm = match &self.last_solution {
            Some(prev) => shift_warm_start(prev, pose),
            None => WarmStart::cold(pose, self.nmpc.horizon),
        };
        let problem = NmpcProblem {
            x0: pose,
            x_ref: self.goal,
            net: &self.net,
            config: self.nmpc.clone(),
            kinematics: self.kinematics,
        };
        let t_solve = Instant::now();
        let solution = problem.solve(&warm);
        let solve_time_s = t_solve.elapsed().as_secs_f64();

        let applied = match solution.status {
            SolveStatus::Infeasible => {
                self.status = ControllerStatus::Stopped;
                self.last_solution = None;
                ControlInput::ZERO
            }
            _ => {
                self.status = ControllerStatus::Running;
                let u0 = solution.u[0];
                self.last_solution = Some(solution.clone());
                u0
            }
        };

        let min_h_horizon = solution
            .x
            .iter()
            .map(|p| self.net.forward(Position2::new(p.x, p.y)))
            .fold(f64::INFINITY, f64::min);
        let min_cbc_residual = (0..solution.u.len())
            .map(|k| {
                self.net.cbc_residual(
                    Position2::new(solution.x[k + 1].x, solution.x[k + 1].y),
                    Position2::new(solution.x[k].x, solution.x[k].y),
                    self.nmpc.gamma,
                )
            })
            .fold(f64::INFINITY, f64::min);

        let record = TickRecord {
            time: world.time,
            pose,
            applied,
            distance_to_goal,
            status: self.status,
            solver_status: Some(solution.status),
            sqp_iterations: solution.iterations,
            objective: Some(solution.objective),
            max_eq_violation: Some(solution.max_eq_violation),
            max_cbc_violation: Some(solution.max_cbc_violation),
            min_cbc_residual: Some(min_cbc_residual),
            min_h_horizon: Some(min_h_horizon),
            train_loss,
            train_time_s,
            solve_time_s,
        };
        (applied, record)
    }
}

/// Drives one controller in closed loop against a caller-supplied plant:
/// `advance(world, input)` must return the next world snapshot. Stops when
/// the controller reports `Reached` or after `max_ticks` ticks, whichever
/// comes first, and returns every tick's record.
pub fn run_to_goal<F>(
    ctrl: &mut RobotController,
    world0: WorldState,
    bodies: &BodySet,
    mut advance: F,
    max_ticks: usize,
) -> Vec<TickRecord>
where
    F: FnMut(&WorldState, ControlInput) -> WorldState,
{
    let mut world = world0;
    let mut records = Vec::new();
    for _ in 0..max_ticks {
        let (input, record) = ctrl.tick(&world, bodies);
        let reached = record.status == ControllerStatus::Reached;
        records.push(record);
        if reached {
            break;
        }
        world = advance(&world, input);
    }
    records
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::step;
    use crate::lbf::DEFAULT_LAYER_SIZES;

    fn constant_net(c: f64) -> BarrierNet {
        let mut net = BarrierNet::zeroed(&[2, 4, 1]);
        net.bias_mut(1)[0] = c;
        net
    }

    fn empty_world(pose: Pose) -> (WorldState, BodySet) {
        let bodies = BodySet {
            robots: vec![crate::world::RobotBody {
                id: "r0".into(),
                radius: 0.1,
            }],
            obstacles: vec![],
        };
        let world = WorldState {
            time: 0.0,
            robot_poses: vec![pose],
            obstacle_centers: vec![],
        };
        (world, bodies)
    }

    fn small_controller(goal: Pose, net: BarrierNet) -> RobotController {
        RobotController::new(
            "r0",
            0,
            goal,
            net,
            NmpcConfig {
                horizon: 8,
                ..NmpcConfig::default()
            },
            KinematicsParams::default(),
            LidarConfig::new(12, 3.5),
            SamplingConfig {
                samples_per_ray: 10,
                delta: 0.2,
            },
            TrainConfig {
                epochs: 5,
                ..TrainConfig::default()
            },
        )
    }

    /// Training disabled by an empty sampling plan: the tick's train step
    /// reports no data and the network stays as constructed.
    fn frozen_net_controller(goal: Pose, net: BarrierNet) -> RobotController {
        let mut ctrl = small_controller(goal, net);
        ctrl.sampling.samples_per_ray = 0;
        ctrl
    }

    #[test]
    fn within_tolerance_reports_reached_with_zero_input() {
        let pose = Pose::new(0.5, 0.5, 1.0);
        let goal = Pose::new(0.55, 0.45, 0.0); // ~0.07 m away
        let (world, bodies) = empty_world(pose);
        let mut ctrl = small_controller(goal, constant_net(1.0));
        let (input, record) = ctrl.tick(&world, &bodies);
        assert_eq!(input.v, 0.0);
        assert_eq!(input.omega, 0.0);
        assert_eq!(ctrl.status, ControllerStatus::Reached);
        assert_eq!(record.status, ControllerStatus::Reached);
        assert!(record.distance_to_goal <= DEFAULT_GOAL_TOLERANCE);
        assert!(record.solver_status.is_none());
        assert!(record.train_loss.is_none());
    }

    #[test]
    fn open_space_first_tick_drives_forward() {
        let pose = Pose::new(0.0, 0.0, 0.0);
        let goal = Pose::new(1.0, 0.0, 0.0);
        let (world, bodies) = empty_world(pose);
        let mut ctrl = small_controller(goal, BarrierNet::new(&DEFAULT_LAYER_SIZES, 1));
        let (input, record) = ctrl.tick(&world, &bodies);
        assert_eq!(ctrl.status, ControllerStatus::Running);
        assert!(
            input.v > 0.0 && input.v <= ctrl.nmpc.u_max[0] + 1e-12,
            "v = {}",
            input.v
        );
        assert!(record.train_loss.is_some());
        assert!(record.solver_status.is_some());
        assert_eq!(record.applied.v, input.v);
    }

    #[test]
    fn infeasible_solve_applies_exact_zero_and_stops() {
        let pose = Pose::new(0.0, 0.0, 0.0);
        let goal = Pose::new(1.0, 0.0, 0.0);
        let (world, bodies) = empty_world(pose);
        // Barrier negative everywhere with zero gradient: no solve can
        // succeed; training is disabled so the net stays hopeless.
        let mut ctrl = frozen_net_controller(goal, constant_net(-0.5));
        let (input, record) = ctrl.tick(&world, &bodies);
        assert_eq!(record.solver_status, Some(SolveStatus::Infeasible));
        assert_eq!(input.v, 0.0);
        assert_eq!(input.omega, 0.0);
        assert_eq!(ctrl.status, ControllerStatus::Stopped);
        assert!(record.train_loss.is_none(), "no data, training skipped");
    }

    #[test]
    fn stopped_controller_reenters_running_when_solvable() {
        let pose = Pose::new(0.0, 0.0, 0.0);
        let goal = Pose::new(1.0, 0.0, 0.0);
        let (world, bodies) = empty_world(pose);
        let mut ctrl = frozen_net_controller(goal, constant_net(-0.5));
        ctrl.tick(&world, &bodies);
        assert_eq!(ctrl.status, ControllerStatus::Stopped);
        // The world improves (here: the learned barrier flips positive) and
        // the next tick succeeds again.
        ctrl.net = constant_net(2.0);
        let (input, record) = ctrl.tick(&world, &bodies);
        assert_eq!(ctrl.status, ControllerStatus::Running);
        assert!(record.solver_status == Some(SolveStatus::Converged));
        assert!(input.v > 0.0);
    }

    #[test]
    fn run_to_goal_terminates_with_reached_record() {
        let pose = Pose::new(0.0, 0.0, 0.0);
        let goal = Pose::new(0.4, 0.0, 0.0);
        let (world, bodies) = empty_world(pose);
        let mut ctrl = frozen_net_controller(goal, constant_net(2.0));
        let kin = ctrl.kinematics;
        let records = run_to_goal(
            &mut ctrl,
            world,
            &bodies,
            |w, u| WorldState {
                time: w.time + kin.ts,
                robot_poses: vec![step(&w.robot_poses[0], &u, &kin)],
                obstacle_centers: vec![],
            },
            400,
        );
        assert_eq!(ctrl.status, ControllerStatus::Reached);
        let last = records.last().unwrap();
        assert_eq!(last.status, ControllerStatus::Reached);
        assert!(last.distance_to_goal <= DEFAULT_GOAL_TOLERANCE);
        for r in &records {
            assert!(r.applied.v.abs() <= ctrl.nmpc.u_max[0] + 1e-12);
            assert!(r.applied.omega.abs() <= ctrl.nmpc.u_max[1] + 1e-12);
            assert!(r.distance_to_goal >= 0.0);
        }
        // Monotone progress in open space: later ticks are never much
        // farther from the goal than the start.
        assert!(records.len() < 400, "should reach well before the cap");
    }

    #[test]
    fn start_at_goal_yields_single_reached_record() {
        let pose = Pose::new(0.3, -0.2, 0.0);
        let (world, bodies) = empty_world(pose);
        let mut ctrl = small_controller(pose, constant_net(1.0));
        let kin = ctrl.kinematics;
        let records = run_to_goal(
            &mut ctrl,
            world,
            &bodies,
            |w, u| WorldState {
                time: w.time + kin.ts,
                robot_poses: vec![step(&w.robot_poses[0], &u, &kin)],
                obstacle_centers: vec![],
            },
            50,
        );
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].status, ControllerStatus::Reached);
    }

    #[test]
    fn max_ticks_one_yields_exactly_one_record() {
        let pose = Pose::new(0.0, 0.0, 0.0);
        let goal = Pose::new (1.0, 0.0, 0.0);
        let (world, bodies) = empty_world(pose);
        let mut ctrl = frozen_net_controller(goal, constant_net(1.0));
        let kin = ctrl.kinematics;
        let records = run_to_goal(
            &mut ctrl,
            world,
            &bodies,
            |w, u| WorldState {
                time: w.time + kin.ts,
                robot_poses: vec![step(&w.robot_poses[0], &u, &kin)],
                obstacle_centers: vec![],
            },
            1,
        );
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].status, ControllerStatus::Running);
    }

    #[test]
    fn warm_start_reuse_keeps_ticks_deterministic() {
        let run = || {
            let pose = Pose::new(0.0, 0.0, 0.0);
            let goal = Pose::new(0.6, 0.2, 0.0);
            let (world, bodies) = empty_world(pose);
            let mut ctrl = small_controller(goal, BarrierNet::new(&DEFAULT_LAYER_SIZES, 7));
            let kin = ctrl.kinematics;
            let records = run_to_goal(
                &mut ctrl,
                world,
                &bodies,
                |w, u| WorldState {
                    time: w.time + kin.ts,
                    robot_poses: vec![step(&w.robot_poses[0], &u, &kin)],
                    obstacle_centers: vec![],
                },
                40,
            );
            records
                .iter()
                .map(|r| (r.pose.x, r.pose.y, r.applied.v, r.applied.omega))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
