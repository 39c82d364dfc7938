//! Discrete-time robot kinematics.
//!
//! The model is a unicycle whose controlled point sits a distance `a` ahead
//! of the wheel axle along the heading. Tracking that offset point makes the
//! position dynamics square in the inputs (the 2x2 position block of the
//! input matrix has determinant `a`), which keeps the planar motion fully
//! actuated for the optimizer.
//!
//! Continuous dynamics:
//!
//! ```text
//! dx/dt     = cos(theta) v - a sin(theta) w
//! dy/dt     = sin(theta) v + a cos(theta) w
//! dtheta/dt = w
//! ```
//!
//! discretized by one explicit Euler step of length `ts`.

use crate::world::{wrap_angle, Pose};
use nalgebra::{Matrix3, Matrix3x2, Vector3};

/// Velocity command: forward speed `v` (m/s) and yaw rate `omega` (rad/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInput {
    pub v: f64,
    pub omega: f64,
}

impl ControlInput {
    pub fn new(v: f64, omega: f64) -> Self {
        Self { v, omega }
    }

    pub const ZERO: ControlInput = ControlInput { v: 0.0, omega: 0.0 };
}

/// Fixed kinematic parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicsParams {
    /// Offset of the controlled point ahead of the axle (m). Must be nonzero
    /// for the position dynamics to be input-invertible.
    pub a: f64,
    /// Sampling period (s).
    pub ts: f64,
}

impl Default for KinematicsParams {
    fn default() -> Self {
        Self { a: 0.1, ts: 0.05 }
    }
}

/// Continuous-time velocity `f(x, u)` of the model.
pub fn velocity(x: &Pose, u: &ControlInput, p: &KinematicsParams) -> Vector3<f64> {
    let (s, c) = x.theta.sin_cos();
    Vector3::new(
        c * u.v - p.a * s * u.omega,
        s * u.v + p.a * c * u.omega,
        u.omega,
    )
}

/// One Euler step without wrapping the heading. The optimizer predicts over
/// this map so heading differences stay continuous across the horizon.
pub fn step_raw(x: &Pose, u: &ControlInput, p: &KinematicsParams) -> Pose {
    let f = velocity(x, u, p);
    Pose {
        x: x.x + p.ts * f[0],
        y: x.y + p.ts * f[1],
        theta: x.theta + p.ts * f[2],
    }
}

/// One Euler step with the heading wrapped to `(-pi, pi]`. This is the plant
/// update used by the simulator.
pub fn step(x: &Pose, u: &ControlInput, p: &KinematicsParams) -> Pose {
    let raw = step_raw(x, u, p);
    Pose {
        theta: wrap_angle(raw.theta),
        ..raw
    }
}

/// Applies an input sequence open loop, returning all `u_seq.len() + 1`
/// poses including the start (unwrapped headings).
pub fn rollout(x0: &Pose, u_seq: &[ControlInput], p: &KinematicsParams) -> Vec<Pose> {
    let mut out = Vec::with_capacity(u_seq.len() + 1);
    out.push(*x0);
    for u in u_seq {
        let next = step_raw(out.last().unwrap(), u, p);
        out.push(next);
    }
    out
}

/// Input matrix `B(theta)` of the continuous dynamics: `f = B(theta) u`.
pub fn input_matrix(theta: f64, a: f64) -> Matrix3x2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3x2::new(c, -a * s, s, a * c, 0.0, 1.0)
}

/// Jacobian of the continuous velocity with respect to the state. Only the
/// heading column is nonzero.
pub fn velocity_state_jacobian(x: &Pose, u: &ControlInput, p: &KinematicsParams) -> Matrix3<f64> {
    let (s, c) = x.theta.sin_cos();
    let mut j = Matrix3::zeros();
    j[(0, 2)] = -s * u.v - p.a * c * u.omega;
    j[(1, 2)] = c * u.v - p.a * s * u.omega;
    j
}
