//! Simulated 2D LiDAR and construction of barrier-training datasets.
//!
//! Each scan casts `ray_count` rays at fixed bearings in the robot frame.
//! From a scan we sample positions at evenly spaced distances along every
//! ray and label each sample with its distance to the sensed surface minus
//! a safety margin `delta`: positive labels mark points comfortably away
//! from the surface (in either direction), negative labels mark points
//! within `delta` of it. Rays that hit nothing are treated as if a surface
//! existed at maximum range, which keeps the learned barrier conservative
//! beyond sensor reach.

use crate::world::{BodySet, Pose, Position2, WorldState};
use std::f64::consts::PI;

/// Sensor geometry: `ray_count` bearings evenly spaced over `[0, 2*pi)` in
/// the robot frame and a maximum range `d_max` (m).
#[derive(Debug, Clone)]
pub struct LidarConfig {
    pub ray_count: usize,
    pub d_max: f64,
    angles: Vec<f64>,
}

impl LidarConfig {
    pub fn new(ray_count: usize, d_max: f64) -> Self {
        let angles = (0..ray_count)
            .map(|r| 2.0 * PI * r as f64 / ray_count as f64)
            .collect();
        Self {
            ray_count,
            d_max,
            angles,
        }
    }

    /// Ray bearings in the robot frame, ascending, starting at 0.
    pub fn angles(&self) -> &[f64] {
        &self.angles
    }
}

impl Default for LidarConfig {
    fn default() -> Self {
        // 36 rays at 3.5 m: a coarse hobby-class scanner.
        Self::new(36, 3.5)
    }
}

/// One LiDAR sweep taken at a fixed pose and time. `distances[r]` is the
/// range along bearing `angles[r]`, always in `(0, d_max]`.
#[derive(Debug, Clone)]
pub struct Scan {
    pub distances: Vec<f64>,
    pub pose: Pose,
    pub time: f64,
}

/// How a scan is turned into labeled training points.
#[derive(Debug, Clone, Copy)]
pub struct SamplingConfig {
    /// Samples per ray; distances are `d_max * s / samples_per_ray` for
    /// `s = 1..=samples_per_ray`.
    pub samples_per_ray: usize,
    /// Safety margin subtracted from the distance-to-surface label (m).
    pub delta: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            samples_per_ray: 50,
            delta: 0.2,
        }
    }
}

/// Labeled training set: world-frame positions and barrier targets.
/// Row-major over (ray, sample) in scan order.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub inputs: Vec<Position2>,
    pub labels: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Simulates a full sweep for robot `robot_index` in the given world.
/// All other robots and every obstacle are opaque circles; the caster's own
/// body is excluded. Ranges are exact circle intersections clamped to
/// `(0, d_max]`.
pub fn simulate_scan(
    robot_index: usize,
    world: &WorldState,
    bodies: &BodySet,
    lidar: &LidarConfig,
) -> Scan {
    let pose = world.robot_poses[robot_index];
    let origin = pose.position();
    let circles = bodies.circles_excluding_robot(world, robot_index);
    let distances = lidar
        .angles
        .iter()
        .map(|alpha| {
            let w = pose.theta + alpha;
            let dir = Position2::new(w.cos(), w.sin());
            crate::world::cast_ray(origin, dir, &circles, lidar.d_max).max(1e-12)
        })
        .collect();
    Scan {
        distances,
        pose,
        time: world.time,
    }
}

/// World-frame position of the sample at distance `d` along ray `r` of a
/// scan taken at `pose`: the local offset `d * (cos a_r, sin a_r)` rotated
/// by the heading and translated by the scan position.
fn sample_position(pose: &Pose, alpha: f64, d: f64) -> Position2 {
    let local = Position2::new(d * alpha.cos(), d * alpha.sin());
    let (s, c) = pose.theta.sin_cos();
    Position2::new(
        pose.x + c * local.x - s * local.y,
        pose.y + s * local.x + c * local.y,
    )
}

/// Barrier label for a sample at ray distance `d_sample` when the ray sensed
/// a surface at `d_hit`: `|d_sample - d_hit| - delta`.
pub fn label(d_sample: f64, d_hit: f64, delta: f64) -> f64 {
    (d_sample - d_hit).abs() - delta
}

/// Expands a scan into the labeled dataset used for one training round.
/// Produces exactly `ray_count * samples_per_ray` rows ordered row-major by
/// (ray, sample).
pub fn build_dataset(scan: &Scan, lidar: &LidarConfig, cfg: &SamplingConfig) -> Dataset {
    let n = lidar.ray_count * cfg.samples_per_ray;
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (r, &alpha) in lidar.angles.iter().enumerate() {
        let d_hit = scan.distances[r];
        for s in 1..=cfg.samples_per_ray {
            let d = lidar.d_max * s as f64 / cfg.samples_per_ray as f64;
            inputs.push(sample_position(&scan.pose, alpha, d));
            labels.push(label(d, d_hit, cfg.delta));
        }
    }
    Dataset { inputs, labels }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Obstacle, ObstacleMotion, RobotBody};
    use approx::assert_relative_eq;

    fn fixture() -> (WorldState, BodySet, LidarConfig, SamplingConfig) {
        // Robot at (1, 0.5) facing +y; one obstacle straight ahead, one to
        // the robot's left (world -x).
        let bodies = BodySet {
            robots: vec![RobotBody {
                id: "r0".into(),
                radius: 0.105,
            }],
            obstacles: vec![
                Obstacle {
                    id: "front".into(),
                    radius: 0.5,
                    motion: ObstacleMotion::Static {
                        center: Position2::new(1.0, 2.5),
                    },
                },
                Obstacle {
                    id: "side".into(),
                    radius: 0.3,
                    motion: ObstacleMotion::Static {
                        center: Position2::new(-1.0, 0.5),
                    },
                },
            ],
        };
        let world = WorldState::at_time(
            0.0,
            vec![Pose::new(1.0, 0.5, std::f64::consts::FRAC_PI_2)],
            &bodies.obstacles,
        );
        (
            world,
            bodies,
            LidarConfig::new(4, 2.0),
            SamplingConfig {
                samples_per_ray: 2,
                delta: 0.2,
            },
        )
    }

    // Expected ranges and rows were computed independently from the
    // circle/ray geometry and frozen.

    #[test]
    fn scan_matches_frozen_ranges() {
        let (world, bodies, lidar, _) = fixture();
        let scan = simulate_scan(0, &world, &bodies, &lidar);
        assert_eq!(scan.distances.len(), 4);
        assert_relative_eq!(scan.distances[0], 1.5, epsilon = 1e-12);
        assert_relative_eq!(scan.distances[1], 1.7000000000000002, epsilon = 1e-12);
        assert_eq!(scan.distances[2], 2.0);
        assert_eq!(scan.distances[3], 2.0);
    }

    #[test]
    fn dataset_matches_frozen_rows() {
        let (world, bodies, lidar, sampling) = fixture();
        let scan = simulate_scan(0, &world, &bodies, &lidar);
        let data = build_dataset(&scan, &lidar, &sampling);
        assert_eq!(data.len(), 8);

        let expected = [
            // (x, y, label), row-major over (ray, sample)
            (1.0, 1.5, 0.3),
            (1.0000000000000002, 2.5, 0.3),
            (0.0, 0.5000000000000002, 0.5000000000000002),
            (-1.0, 0.5000000000000002, 0.09999999999999981),
            (0.9999999999999998, -0.5, 0.8),
            (0.9999999999999997, -1.5, -0.2),
            (2.0, 0.4999999999999998, 0.8),
            (3.0, 0.4999999999999995, -0.2),
        ];
        for (i, &(x, y, lab)) in expected.iter().enumerate() {
            assert_relative_eq!(data.inputs[i].x, x, epsilon = 1e-12);
            assert_relative_eq!(data.inputs[i].y, y, epsilon = 1e-12);
            assert_relative_eq!(data.labels[i], lab, epsilon = 1e-12);
        }
    }

    #[test]
    fn free_ray_endpoint_is_labeled_unsafe() {
        // A ray that hits nothing gets d_hit = d_max, so its farthest sample
        // sits exactly at the virtual surface: label -delta.
        let (world, bodies, lidar, sampling) = fixture();
        let scan = simulate_scan(0, &world, &bodies, &lidar);
        let data = build_dataset(&scan, &lidar, &sampling);
        assert_relative_eq!(data.labels[5], -sampling.delta, epsilon = 1e-12);
        assert_relative_eq!(data.labels[7], -sampling.delta, epsilon = 1e-12);
    }

    #[test]
    fn lidar_angles_are_evenly_spaced() {
        let lidar = LidarConfig::new(36, 3.5);
        assert_eq!(lidar.angles().len(), 36);
        assert_eq!(lidar.angles()[0], 0.0);
        let step = 2.0 * std::f64::consts::PI / 36.0;
        for (r, &a) in lidar.angles().iter().enumerate() {
            assert_relative_eq!(a, step * r as f64, epsilon = 1e-12);
            assert!(a < 2.0 * std::f64::consts::PI);
        }
    }

    #[test]
    fn other_robots_are_visible_but_self_is_not() {
        let bodies = BodySet {
            robots: vec![
                RobotBody {
                    id: "a".into(),
                    radius: 0.105,
                },
                RobotBody {
                    id: "b".into(),
                    radius: 0.105,
                },
            ],
            obstacles: vec![],
        };
        let world = WorldState::at_time(
            0.0,
            vec![Pose::new(0.0, 0.0, 0.0), Pose::new(1.0, 0.0, 0.0)],
            &bodies.obstacles,
        );
        let lidar = LidarConfig::new(4, 3.5);
        let scan = simulate_scan(0, &world, &bodies, &lidar);
        // Ray 0 points +x and sees robot b's near surface at 1 - 0.105.
        assert_relative_eq!(scan.distances[0], 0.895, epsilon = 1e-12);
        // The other rays see nothing; in particular the caster's own body
        // never shadows the scan.
        assert_eq!(scan.distances[1], 3.5);
        assert_eq!(scan.distances[2], 3.5);
        assert_eq!(scan.distances[3], 3.5);
    }

    #[test]
    fn dataset_size_is_rays_times_samples() {
        let (world, bodies, _, _) = fixture();
        let lidar = LidarConfig::new(36, 3.5);
        let sampling = SamplingConfig::default();
        let scan = simulate_scan(0, &world, &bodies, &lidar);
        let data = build_dataset(&scan, &lidar, &sampling);
        assert_eq!(data.len(), 36 * 50);
        assert_eq!(data.inputs.len(), data.labels.len());
    }
}
