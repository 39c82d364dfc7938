//! World model: poses, circular bodies, obstacle motion, ray casting and
//! clearance queries.
//!
//! Everything in the plane is a circle: robots and obstacles alike. Obstacle
//! centers are a pure function of time so the world can be reconstructed at
//! any instant without integrating obstacle state.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Wraps an angle to the half-open interval `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut t = theta % two_pi;
    if t <= -PI {
        t += two_pi;
    } else if t > PI {
        t -= two_pi;
    }
    t
}

/// A point (or free vector) in the plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position2 {
    pub x: f64,
    pub y: f64,
}

impl Position2 {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance_to(&self, other: &Position2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(&self, other: &Position2) -> f64 {
        self.x * other.x + self.y * other.y
    }
}

impl std::ops::Add for Position2 {
    type Output = Position2;
    fn add(self, rhs: Position2) -> Position2 {
        Position2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Position2 {
    type Output = Position2;
    fn sub(self, rhs: Position2) -> Position2 {
        Position2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl std::ops::Mul<f64> for Position2 {
    type Output = Position2;
    fn mul(self, rhs: f64) -> Position2 {
        Position2::new(self.x * rhs, self.y * rhs)
    }
}

/// Planar pose `(x, y, theta)` with the heading normalized to `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    /// Builds a pose, wrapping `theta` into `(-pi, pi]`.
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn position(&self) -> Position2 {
        Position2::new(self.x, self.y)
    }

    /// Returns a copy with the heading wrapped into `(-pi, pi]`.
    pub fn normalized(&self) -> Pose {
        Pose::new(self.x, self.y, self.theta)
    }
}

/// A circle in world coordinates; the common currency of collision and
/// ray-cast queries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    pub center: Position2,
    pub radius: f64,
}

impl Circle {
    pub fn new(center: Position2, radius: f64) -> Self {
        Self { center, radius }
    }
}

/// Motion law of an obstacle. Centers are evaluated analytically from time,
/// never integrated, so replays are exact.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObstacleMotion {
    /// Fixed center.
    Static { center: Position2 },
    /// Constant-velocity straight line: `center(t) = start + velocity * t`.
    LinearPath {
        start: Position2,
        velocity: Position2,
    },
    /// Constant speed along the closed polyline through `points`, looping
    /// forever. Parametrized by arc length so speed is uniform on every
    /// segment.
    WaypointLoop { points: Vec<Position2>, speed: f64 },
}

/// A circular obstacle with a motion law.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub id: String,
    pub radius: f64,
    pub motion: ObstacleMotion,
}

/// Evaluates the center of an obstacle at absolute time `t` (seconds).
pub fn obstacle_center_at(obstacle: &Obstacle, t: f64) -> Position2 {
    match &obstacle.motion {
        ObstacleMotion::Static { center } => *center,
        ObstacleMotion::LinearPath { start, velocity } => *start + *velocity * t,
        ObstacleMotion::WaypointLoop { points, speed } => {
            if points.len() < 2 || *speed == 0.0 {
                return points.first().copied().unwrap_or(Position2::new(0.0, 0.0));
            }
            // Closed loop: the final segment returns to points[0].
            let n = points.len();
            let seg_len: Vec<f64> = (0..n)
                .map(|i| points[i].distance_to(&points[(i + 1) % n]))
                .collect();
            let total: f64 = seg_len.iter().sum();
            if total == 0.0 {
                return points[0];
            }
            let mut s = (speed * t) % total;
            if s < 0.0 {
                s += total;
            }
            for i in 0..n {
                if s <= seg_len[i] {
                    if seg_len[i] == 0.0 {
                        return points[i];
                    }
                    let alpha = s / seg_len[i];
                    let a = points[i];
                    let b = points[(i + 1) % n];
                    return a + (b - a) * alpha;
                }
                s -= seg_len[i];
            }
            points[0]
        }
    }
}

/// A robot's physical footprint.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotBody {
    pub id: String,
    pub radius: f64,
}

/// Static body registry for a scenario: who exists and how big they are.
/// Index-aligned with the pose/center vectors in [`WorldState`].
#[derive(Debug, Clone)]
pub struct BodySet {
    pub robots: Vec<RobotBody>,
    pub obstacles: Vec<Obstacle>,
}

impl BodySet {
    /// Circles for every body except robot `exclude`, in a fixed order
    /// (robots first, then obstacles). Used for ray casting from that robot.
    pub fn circles_excluding_robot(&self, world: &WorldState, exclude: usize) -> Vec<Circle> {
        let mut out = Vec::with_capacity(self.robots.len() + self.obstacles.len());
        for (i, body) in self.robots.iter().enumerate() {
            if i == exclude {
                continue;
            }
            out.push(Circle::new(world.robot_poses[i].position(), body.radius));
        }
        for (j, obs) in self.obstacles.iter().enumerate() {
            out.push(Circle::new(world.obstacle_centers[j], obs.radius));
        }
        out
    }

    /// All robot circles, index-aligned with `world.robot_poses`.
    pub fn robot_circles(&self, world: &WorldState) -> Vec<Circle> {
        self.robots
            .iter()
            .zip(&world.robot_poses)
            .map(|(body, pose)| Circle::new(pose.position(), body.radius))
            .collect()
    }

    /// All obstacle circles, index-aligned with `world.obstacle_centers`.
    pub fn obstacle_circles(&self, world: &WorldState) -> Vec<Circle> {
        self.obstacles
            .iter()
            .zip(&world.obstacle_centers)
            .map(|(obs, c)| Circle::new(*c, obs.radius))
            .collect()
    }
}

/// Dynamic snapshot of the world at one instant. Robots and obstacles are
/// identified by index into the corresponding [`BodySet`] vectors, which
/// keeps iteration order deterministic.
#[derive(Debug, Clone)]
pub struct WorldState {
    /// Simulation time in seconds.
    pub time: f64,
    pub robot_poses: Vec<Pose>,
    pub obstacle_centers: Vec<Position2>,
}

impl WorldState {
    /// Builds the snapshot at time `t` from initial robot poses and the
    /// obstacle motion laws.
    pub fn at_time(t: f64, robot_poses: Vec<Pose>, obstacles: &[Obstacle]) -> Self {
        Self {
            time: t,
            robot_poses,
            obstacle_centers: obstacles.iter().map(|o| obstacle_center_at(o, t)).collect(),
        }
    }
}

/// Casts a ray from `origin` along the unit direction `dir` against a set of
/// circles. Returns the distance to the first intersection, clamped to
/// `d_max` when nothing is hit within range.
///
/// Exact circle-line intersection (no marching). A ray starting inside a
/// circle reports the exit distance.
pub fn cast_ray(origin: Position2, dir: Position2, circles: &[Circle], d_max: f64) -> f64 {
    let mut best = d_max;
    for c in circles {
        let oc = c.center - origin;
        // |origin + t*dir - center|^2 = r^2, with |dir| = 1:
        //   t^2 - 2 b t + (|oc|^2 - r^2) = 0, b = oc . dir
        let b = oc.dot(&dir);
        let disc = b * b - (oc.dot(&oc) - c.radius * c.radius);
        if disc < 0.0 {
            continue;
        }
        let s = disc.sqrt();
        let t_near = b - s;
        let t_far = b + s;
        let t = if t_near >= 0.0 {
            t_near
        } else if t_far >= 0.0 {
            t_far
        } else {
            continue;
        };
        if t < best {
            best = t;
        }
    }
    best
}

/// Minimum separation between circle surfaces: over all unordered pairs drawn
/// from `robots` x `robots` and `robots` x `obstacles`. Obstacle-obstacle
/// pairs are ignored (obstacles may legally overlap each other). Returns
/// `f64::INFINITY` when no pair exists. Negative values mean interpenetration.
pub fn min_clearance(robots: &[Circle], obstacles: &[Circle]) -> f64 {
    let mut min = f64::INFINITY;
    for i in 0..robots.len() {
        for j in (i + 1)..robots.len() {
            let d = surface_distance(&robots[i], &robots[j]);
            if d < min {
                min = d;
            }
        }
        for obs in obstacles {
            let d = surface_distance(&robots[i], obs);
            if d < min {
                min = d;
            }
        }
    }
    min
}

/// Signed surface-to-surface distance between two circles.
pub fn surface_distance(a: &Circle, b: &Circle) -> f64 {
    // Radii are summed before subtracting so the result is bit-identical
    // under argument swap.
    a.center.distance_to(&b.center) - (a.radius + b.radius)
}
