//! Decentralized multi-robot navigation with learned barrier functions.
//!
//! Each robot runs a self-contained control stack: a simulated 2D LiDAR
//! observes the surroundings, a small neural network is trained online to
//! approximate a barrier function of the local free space, and a nonlinear
//! MPC (multiple shooting, SQP over dense QP subproblems) tracks the goal
//! while enforcing a discrete-time barrier condition along the horizon.
//!
//! The crate is deterministic end to end: all randomness flows from scenario
//! seeds through counter-based generators, and the simulation loop iterates
//! robots in a fixed order. Running the same scenario twice produces
//! bit-identical trajectories.

pub mod controller;
pub mod kinematics;
pub mod lbf;
pub mod nmpc;
pub mod sensing;
pub mod simulator;
pub mod world;

pub use controller::{ControllerStatus, RobotController, TickRecord};
pub use kinematics::{ControlInput, KinematicsParams};
pub use lbf::{BarrierNet, SafetyClass, TrainConfig, TrainError, TrainReport};
pub use nmpc::{HorizonSolution, NmpcConfig, NmpcProblem, SolveStatus, WarmStart};
pub use sensing::{Dataset, LidarConfig, SamplingConfig, Scan};
pub use simulator::{
    load_scenario, run, simulate, summarize, MetricsSummary, RobotOutcome, RunOptions, RunResult,
    Scenario, SimError,
};
pub use world::{Circle, Obstacle, ObstacleMotion, Pose, Position2, RobotBody, WorldState};
